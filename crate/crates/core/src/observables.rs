//! Density fractions, charge/spin waves and interference probes.

use serde::Serialize;

use crate::dynamics::{StateVector, Trajectory};
use crate::error::{Error, Result};
use crate::lattice::LatticeKind;

const MODULE: &str = "observables";

/// Per-site density fractions at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRecord {
    pub time: f64,
    /// `components[s][i] = |ψ_{i,s}|² / Σ|ψ|²`.
    pub components: Vec<Vec<f64>>,
    /// Per-site sum over spin components.
    pub totals: Vec<f64>,
}

impl DensityRecord {
    pub fn spin_dim(&self) -> usize {
        self.components.len()
    }
}

/// Density fractions of `psi`; an all-zero state gives all-zero fractions.
pub fn density(psi: &StateVector, time: f64) -> DensityRecord {
    let d = psi.spin_dim();
    let n = psi.n_sites();
    let norm = psi.norm_sqr();
    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    let mut components = vec![vec![0.0; n]; d];
    let mut totals = vec![0.0; n];
    for (k, z) in psi.amplitudes().iter().enumerate() {
        let v = z.norm_sqr() * scale;
        components[k % d][k / d] = v;
        totals[k / d] += v;
    }
    DensityRecord { time, components, totals }
}

fn require_two_spins(rec: &DensityRecord) -> Result<()> {
    if rec.spin_dim() != 2 {
        return Err(Error::invalid(MODULE, "spin_dim", format!("charge/spin densities need two spin components, got {}", rec.spin_dim())));
    }
    Ok(())
}

/// `n_{i,1} + n_{i,2}`.
pub fn charge_density(rec: &DensityRecord) -> Result<Vec<f64>> {
    require_two_spins(rec)?;
    Ok(rec.components[0].iter().zip(&rec.components[1]).map(|(a, b)| a + b).collect())
}

/// `n_{i,1} - n_{i,2}`.
pub fn spin_density(rec: &DensityRecord) -> Result<Vec<f64>> {
    require_two_spins(rec)?;
    Ok(rec.components[0].iter().zip(&rec.components[1]).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterferenceMetrics {
    pub probe_sites: Vec<usize>,
    pub series: Vec<(f64, f64)>,
    pub max: f64,
    pub time_of_max: f64,
    pub mean: f64,
}

impl InterferenceMetrics {
    fn from_series(probe_sites: Vec<usize>, series: Vec<(f64, f64)>) -> Self {
        let (mut max, mut time_of_max) = (0.0, 0.0);
        for &(t, v) in &series {
            if v > max {
                max = v;
                time_of_max = t;
            }
        }
        let mean = if series.is_empty() {
            0.0
        } else {
            series.iter().map(|&(_, v)| v).sum::<f64>() / series.len() as f64
        };
        InterferenceMetrics {
            probe_sites,
            series,
            max,
            time_of_max,
            mean,
        }
    }
}

/// Probe the ring site antipodal to `start_site`.
pub fn opposite_site_series(traj: &Trajectory, start_site: usize) -> Result<InterferenceMetrics> {
    let LatticeKind::Ring { sites, .. } = traj.meta.geometry else {
        return Err(Error::invalid(MODULE, "geometry", "opposite-site probe needs a ring lattice; use a probe region instead"));
    };
    if start_site >= sites {
        return Err(Error::invalid(MODULE, "start_site", format!("site {start_site} out of range (ring has {sites} sites)")));
    }
    let probe = (start_site + sites / 2) % sites;
    let series = traj.records.iter().map(|r| (r.time, r.totals[probe])).collect();
    Ok(InterferenceMetrics::from_series(vec![probe], series))
}

/// Summed density over `region` at every snapshot.
pub fn probe_region_series(traj: &Trajectory, region: &[usize]) -> Result<InterferenceMetrics> {
    if region.is_empty() {
        return Err(Error::invalid(MODULE, "region", "probe region is empty"));
    }
    let n = traj.records.first().map_or(0, |r| r.totals.len());
    if let Some(&bad) = region.iter().find(|&&s| s >= n) {
        return Err(Error::invalid(MODULE, "region", format!("site {bad} out of range (lattice has {n} sites)")));
    }
    let series = traj
        .records
        .iter()
        .map(|r| (r.time, region.iter().map(|&s| r.totals[s]).sum()))
        .collect();
    Ok(InterferenceMetrics::from_series(region.to_vec(), series))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Destructive,
    Constructive,
    Mixed,
}

pub fn interference_verdict(metrics: &InterferenceMetrics, eps_destructive: f64, theta_constructive: f64) -> Result<Verdict> {
    if !(eps_destructive > 0.0 && eps_destructive < theta_constructive) {
        return Err(Error::invalid(
            MODULE,
            "thresholds",
            format!("need 0 < eps_destructive < theta_constructive, got {eps_destructive} and {theta_constructive}"),
        ));
    }
    Ok(if metrics.max < eps_destructive {
        Verdict::Destructive
    } else if metrics.max > theta_constructive {
        Verdict::Constructive
    } else {
        Verdict::Mixed
    })
}

/// Constructive threshold for a square run: twice the mean density over
/// sites whose distance from `center` lies within `[r_in, r_out]`.
pub fn annulus_threshold(distances: &[f64], totals: &[f64], r_in: f64, r_out: f64) -> f64 {
    let (sum, count) = distances
        .iter()
        .zip(totals)
        .filter(|(d, _)| **d >= r_in && **d <= r_out)
        .fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        2.0 * sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve_linear, prepare_packet, EvolveParams};
    use crate::gauge::{build_nonabelian, phase_only_hopping};
    use crate::lattice::{build_ring, build_square, Vec2};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn run_ring(n: usize, l: i32, width: f64, spin_dim: usize, t_end: f64) -> Trajectory {
        let ring = build_ring(n, 1.0).unwrap();
        let mut h = phase_only_hopping(&ring, l, 0.05).unwrap();
        if spin_dim == 2 {
            h = build_nonabelian(&h).unwrap();
        }
        let psi = prepare_packet(&ring, 0, width, spin_dim, None).unwrap();
        let p = EvolveParams {
            dt: 0.05,
            t_end,
            lambda: 0.0,
            record_stride: 20,
        };
        evolve_linear(&h, &psi, &p).unwrap()
    }

    #[test]
    fn density_examples() {
        let ring = build_ring(10, 1.0).unwrap();
        let delta = prepare_packet(&ring, 3, 0.0, 1, None).unwrap();
        let r = density(&delta, 0.0);
        assert_eq!(r.totals[3], 1.0);
        assert_eq!(r.totals.iter().sum::<f64>(), 1.0);

        let uniform = StateVector::new(1, vec![Complex64::new(0.3, -0.1); 10]).unwrap();
        for v in density(&uniform, 0.0).totals {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn charge_and_spin_examples() {
        let ring = build_ring(10, 1.0).unwrap();
        let up = prepare_packet(&ring, 0, 1.5, 2, Some([1.0, 0.0])).unwrap();
        let r = density(&up, 0.0);
        assert_eq!(charge_density(&r).unwrap(), r.components[0]);
        assert_eq!(spin_density(&r).unwrap(), r.totals);
        let eq = density(&prepare_packet(&ring, 0, 1.5, 2, None).unwrap(), 0.0);
        assert!(spin_density(&eq).unwrap().iter().all(|v| v.abs() < 1e-16));
        let scalar = density(&prepare_packet(&ring, 0, 1.5, 1, None).unwrap(), 0.0);
        assert!(charge_density(&scalar).is_err());
        assert!(spin_density(&scalar).is_err());
    }

    #[test]
    fn ring_probe_is_antipode() {
        let tr = run_ring(100, 1, 0.0, 1, 1.0);
        let m = opposite_site_series(&tr, 0).unwrap();
        assert_eq!(m.probe_sites, vec![50]);
        assert!(m.max >= m.mean && m.mean >= 0.0);
        assert!(opposite_site_series(&tr, 100).is_err());
    }

    #[test]
    fn opposite_probe_rejects_square() {
        let sq = build_square(4, 1.0, Vec2::default()).unwrap();
        let h = phase_only_hopping(&sq, 1, 0.05).unwrap();
        let psi = prepare_packet(&sq, 0, 0.0, 1, None).unwrap();
        let p = EvolveParams {
            t_end: 1.0,
            ..Default::default()
        };
        let tr = evolve_linear(&h, &psi, &p).unwrap();
        assert!(opposite_site_series(&tr, 0).is_err());
        let all: Vec<usize> = (0..16).collect();
        let m = probe_region_series(&tr, &all).unwrap();
        assert!(m.series.iter().all(|&(_, v)| (v - 1.0).abs() < 1e-12));
        assert_eq!(probe_region_series(&tr, &[0]).unwrap().series[0].1, 1.0);
        assert!(probe_region_series(&tr, &[]).is_err());
        assert!(probe_region_series(&tr, &[16]).is_err());
    }

    #[test]
    fn verdict_classes() {
        let m = |max: f64| InterferenceMetrics::from_series(vec![0], vec![(0.0, max)]);
        assert_eq!(interference_verdict(&m(0.0), 1e-6, 0.02).unwrap(), Verdict::Destructive);
        assert_eq!(interference_verdict(&m(1.0), 1e-6, 0.02).unwrap(), Verdict::Constructive);
        assert_eq!(interference_verdict(&m(0.01), 1e-6, 0.02).unwrap(), Verdict::Mixed);
        assert!(interference_verdict(&m(0.0), 0.02, 1e-6).is_err());
        assert!(interference_verdict(&m(0.0), 0.0, 1e-6).is_err());
    }

    #[test]
    fn annulus_mean() {
        let d = [0.5, 1.0, 2.0, 3.0];
        let v = [0.4, 0.2, 0.3, 0.1];
        assert!((annulus_threshold(&d, &v, 1.0, 2.0) - 0.5).abs() < 1e-15);
        assert_eq!(annulus_threshold(&d, &v, 10.0, 20.0), 0.0);
    }

    #[test]
    fn zero_flux_ring_matches_real_hopping() {
        // l = 0 phase-only hopping is real and uniform already; check it
        // against a ring whose odd links were conjugated (still real).
        let ring = build_ring(20, 1.0).unwrap();
        let h0 = phase_only_hopping(&ring, 0, 0.05).unwrap();
        for (_, hop) in h0.entries() {
            let z = hop.component(0, 0);
            assert_eq!(z, Complex64::new(0.05, 0.0));
        }
    }

    #[test]
    fn mirror_symmetry_delta_packet() {
        for l in [0, 1] {
            let tr = run_ring(20, l, 0.0, 1, 200.0);
            for rec in &tr.records {
                for k in 1..10 {
                    assert!((rec.totals[k] - rec.totals[20 - k]).abs() < 1e-7, "l={l} t={} k={k}", rec.time);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn charge_bounds_spin(w1 in -1.0f64..1.0, w2 in -1.0f64..1.0, width in 0.0f64..3.0, l in 0i32..3) {
            prop_assume!(w1.hypot(w2) > 1e-3);
            let ring = build_ring(12, 1.0).unwrap();
            let h = build_nonabelian(&phase_only_hopping(&ring, l, 0.05).unwrap()).unwrap();
            let psi = prepare_packet(&ring, 0, width, 2, Some([w1, w2])).unwrap();
            let p = EvolveParams { dt: 0.05, t_end: 40.0, lambda: 0.0, record_stride: 40 };
            let tr = evolve_linear(&h, &psi, &p).unwrap();
            for rec in &tr.records {
                let c = charge_density(rec).unwrap();
                let s = spin_density(rec).unwrap();
                prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-8);
                for (ci, si) in c.iter().zip(&s) {
                    prop_assert!(si.abs() <= ci + 1e-15);
                    prop_assert!(*ci >= 0.0 && *ci <= 1.0);
                }
            }
        }

        #[test]
        fn densities_are_fractions(re in proptest::collection::vec(-1.0f64..1.0, 8), im in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let amps: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
            prop_assume!(amps.iter().any(|z| z.norm() > 1e-3));
            let psi = StateVector::new(2, amps).unwrap();
            let r = density(&psi, 0.0);
            prop_assert!((r.totals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.components.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
