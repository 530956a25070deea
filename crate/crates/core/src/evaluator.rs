//! Harvested energy, SINR, and throughput from a feature vector and a
//! candidate configuration.
//!
//! Every solver in the workspace scores candidates through this module, so
//! the closed forms live here once. The effective energy-transfer channel is
//!
//! ```text
//! h_eff[m] = a[m] + sum_n exp(j * theta_ET[n]) * V[n, m]
//! ```
//!
//! harvested energy is `eta * tau * T_c * (P_B ||h_eff||^2 + P_I |h_IS +
//! e_ET . u_IS|^2)`, the source retransmits it over the remaining `1 - tau`,
//! and the destination SINR divides the received signal power by interference
//! plus noise. The coherence time cancels between harvesting and
//! retransmission, so the SINR and throughput are T_c-free.
//!
//! `log2` is computed as `ln(x) * (1 / ln 2)` so the trainable graph in
//! [`crate::irsnet`] can mirror the exact same arithmetic.

use std::fmt;

use num_complex::Complex64;

use crate::channel::{FeatureVector, SystemParams};

/// Lower/upper margin enforced on optimizer-produced time splits. The
/// evaluator itself accepts any `tau` strictly inside (0, 1); the margin
/// exists so solver outputs stay clear of the `tau = 1` singularity.
pub const TAU_MARGIN: f64 = 1e-6;

pub(crate) const INV_LN_2: f64 = 1.0 / std::f64::consts::LN_2;

#[derive(Debug)]
pub enum EvalError {
    /// Phase vector length does not match the feature's element count.
    Dimension { what: &'static str, expected: usize, got: usize },
    /// `tau` outside the open interval (0, 1).
    DegenerateSplit(f64),
    /// Zero effective channel cannot be beamformed.
    SingularChannel,
    /// Interferer power is positive but the features carry no interferer blocks.
    ModeMismatch,
    /// Batch operations need at least one sample and equal lengths.
    EmptyBatch,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Dimension { what, expected, got } => {
                write!(f, "{what}: expected {expected}, got {got}")
            }
            EvalError::DegenerateSplit(t) => write!(f, "tau must lie in (0, 1), got {t}"),
            EvalError::SingularChannel => write!(f, "effective channel has zero norm"),
            EvalError::ModeMismatch => {
                write!(f, "interferer power set but features are noise-limited")
            }
            EvalError::EmptyBatch => write!(f, "batch must be nonempty with equal lengths"),
        }
    }
}

impl std::error::Error for EvalError {}

/// The decision variables: one phase per reflecting element for each
/// protocol phase, plus the time-splitting factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    /// Energy-transfer phase shifts, radians.
    pub et_phases: Vec<f64>,
    /// Information-transfer phase shifts, radians.
    pub it_phases: Vec<f64>,
    /// Fraction of the coherence interval spent harvesting, in (0, 1).
    pub tau: f64,
}

impl PhaseConfig {
    pub fn new(et_phases: Vec<f64>, it_phases: Vec<f64>, tau: f64) -> Result<Self, EvalError> {
        if et_phases.len() != it_phases.len() {
            return Err(EvalError::Dimension {
                what: "phase vectors",
                expected: et_phases.len(),
                got: it_phases.len(),
            });
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(EvalError::DegenerateSplit(tau));
        }
        Ok(PhaseConfig { et_phases, it_phases, tau })
    }

    pub fn elements(&self) -> usize {
        self.et_phases.len()
    }

    /// Wraps every phase into `[0, 2*pi)` and clamps `tau` to
    /// `[TAU_MARGIN, 1 - TAU_MARGIN]`.
    pub fn canonicalize(&mut self) {
        for p in self.et_phases.iter_mut().chain(self.it_phases.iter_mut()) {
            *p = wrap_phase(*p);
        }
        self.tau = self.tau.clamp(TAU_MARGIN, 1.0 - TAU_MARGIN);
    }
}

/// Wraps an angle into `[0, 2*pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let wrapped = theta.rem_euclid(tau);
    // rem_euclid can return exactly 2*pi when theta is a tiny negative value.
    if wrapped >= tau {
        0.0
    } else {
        wrapped
    }
}

/// Everything the closed forms produce for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    /// Harvested energy over the coherence interval, joules.
    pub harvested_energy: f64,
    /// Source transmit power during information transfer, watts.
    pub source_power: f64,
    /// Destination SINR, dimensionless.
    pub sinr: f64,
    /// Throughput, bits/s/Hz.
    pub throughput: f64,
}

fn check_phases(f: &FeatureVector, phases: &[f64], what: &'static str) -> Result<(), EvalError> {
    if phases.len() != f.elements() {
        return Err(EvalError::Dimension { what, expected: f.elements(), got: phases.len() });
    }
    Ok(())
}

fn check_mode(f: &FeatureVector, p: &SystemParams) -> Result<(), EvalError> {
    if p.interferer_power > 0.0 && !f.interference() {
        return Err(EvalError::ModeMismatch);
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<(), EvalError> {
    if tau > 0.0 && tau < 1.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(EvalError::DegenerateSplit(tau))
    }
}

/// `|h + sum_n exp(j*theta[n]) * (u_re[n] + j*u_im[n])|^2`.
///
/// The cascade sum is accumulated separately and added to the direct term
/// last, mirroring the order used by the trainable graph.
fn combined_gain(
    h: Complex64,
    u_re: &[f64],
    u_im: &[f64],
    cos_t: &[f64],
    sin_t: &[f64],
) -> f64 {
    let mut acc_re = 0.0;
    let mut acc_im = 0.0;
    for n in 0..u_re.len() {
        acc_re += cos_t[n] * u_re[n] - sin_t[n] * u_im[n];
        acc_im += cos_t[n] * u_im[n] + sin_t[n] * u_re[n];
    }
    let re = acc_re + h.re;
    let im = acc_im + h.im;
    re * re + im * im
}

/// Effective beacon-to-source channel under the energy-transfer phases:
/// `h_eff[m] = a[m] + sum_n exp(j*theta[n]) * V[n, m]`.
pub fn effective_et_channel(
    f: &FeatureVector,
    et_phases: &[f64],
) -> Result<Vec<Complex64>, EvalError> {
    check_phases(f, et_phases, "et_phases")?;
    let n = f.elements();
    let m = f.antennas();
    let v_re = f.v_re();
    let v_im = f.v_im();
    let mut out = Vec::with_capacity(m);
    for col in 0..m {
        let mut acc = Complex64::new(0.0, 0.0);
        for row in 0..n {
            let idx = row + col * n;
            let e = Complex64::new(et_phases[row].cos(), et_phases[row].sin());
            acc += e * Complex64::new(v_re[idx], v_im[idx]);
        }
        out.push(f.a(col) + acc);
    }
    Ok(out)
}

/// Unit-norm transmit direction achieving `|h_eff^T w| = ||h_eff||`: the
/// conjugate-matched beamformer. Exists for the self-consistency check; the
/// closed forms below use the squared norm directly.
pub fn mrt_beamformer(h_eff: &[Complex64]) -> Result<Vec<Complex64>, EvalError> {
    let norm_sqr: f64 = h_eff.iter().map(|c| c.norm_sqr()).sum();
    if norm_sqr == 0.0 {
        return Err(EvalError::SingularChannel);
    }
    let norm = norm_sqr.sqrt();
    Ok(h_eff.iter().map(|c| c.conj() / norm).collect())
}

/// Received energy-transfer power before the `eta * tau * T_c` factor:
/// `P_B ||h_eff||^2 + P_I |h_IS + e_ET . u_IS|^2`.
fn et_gain(f: &FeatureVector, cos_t: &[f64], sin_t: &[f64], p: &SystemParams) -> f64 {
    let n = f.elements();
    let v_re = f.v_re();
    let v_im = f.v_im();
    let a_re = f.a_re();
    let a_im = f.a_im();
    let mut norm_sqr = 0.0;
    for col in 0..f.antennas() {
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for row in 0..n {
            let idx = row + col * n;
            acc_re += cos_t[row] * v_re[idx] - sin_t[row] * v_im[idx];
            acc_im += cos_t[row] * v_im[idx] + sin_t[row] * v_re[idx];
        }
        let re = acc_re + a_re[col];
        let im = acc_im + a_im[col];
        norm_sqr += re * re + im * im;
    }
    let mut gain = p.pb_power * norm_sqr;
    if f.interference() && p.interferer_power > 0.0 {
        let u_re = f.u_is_re().unwrap();
        let u_im = f.u_is_im().unwrap();
        gain += p.interferer_power * combined_gain(f.h_is().unwrap(), u_re, u_im, cos_t, sin_t);
    }
    gain
}

fn trig_tables(phases: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut cos_t = Vec::with_capacity(phases.len());
    let mut sin_t = Vec::with_capacity(phases.len());
    for &t in phases {
        let (s, c) = t.sin_cos();
        cos_t.push(c);
        sin_t.push(s);
    }
    (cos_t, sin_t)
}

/// Energy harvested by the source over one coherence interval.
pub fn harvested_energy(
    f: &FeatureVector,
    et_phases: &[f64],
    tau: f64,
    p: &SystemParams,
) -> Result<f64, EvalError> {
    check_phases(f, et_phases, "et_phases")?;
    check_mode(f, p)?;
    check_tau(tau)?;
    let (cos_t, sin_t) = trig_tables(et_phases);
    Ok(p.eh_efficiency * tau * p.coherence_time * et_gain(f, &cos_t, &sin_t, p))
}

/// Source transmit power `E_s / ((1 - tau) * T_c)`.
pub fn source_power(harvested: f64, tau: f64, coherence_time: f64) -> Result<f64, EvalError> {
    check_tau(tau)?;
    Ok(harvested / ((1.0 - tau) * coherence_time))
}

/// Destination SINR for a full configuration.
pub fn sinr(f: &FeatureVector, cfg: &PhaseConfig, p: &SystemParams) -> Result<f64, EvalError> {
    sinr_from_parts(f, &cfg.et_phases, &cfg.it_phases, cfg.tau, p)
}

/// Slice-based SINR used by solvers in their hot loops.
pub fn sinr_from_parts(
    f: &FeatureVector,
    et_phases: &[f64],
    it_phases: &[f64],
    tau: f64,
    p: &SystemParams,
) -> Result<f64, EvalError> {
    check_phases(f, et_phases, "et_phases")?;
    check_phases(f, it_phases, "it_phases")?;
    check_mode(f, p)?;
    check_tau(tau)?;

    let (et_cos, et_sin) = trig_tables(et_phases);
    let (it_cos, it_sin) = trig_tables(it_phases);
    Ok(sinr_inner(f, &et_cos, &et_sin, &it_cos, &it_sin, tau, p))
}

fn sinr_inner(
    f: &FeatureVector,
    et_cos: &[f64],
    et_sin: &[f64],
    it_cos: &[f64],
    it_sin: &[f64],
    tau: f64,
    p: &SystemParams,
) -> f64 {
    let gain_et = et_gain(f, et_cos, et_sin, p);
    let signal = combined_gain(f.h_sd(), f.u_sd_re(), f.u_sd_im(), it_cos, it_sin);
    let denom_power = if f.interference() && p.interferer_power > 0.0 {
        let gain =
            combined_gain(f.h_id().unwrap(), f.u_id_re().unwrap(), f.u_id_im().unwrap(), it_cos, it_sin);
        p.interferer_power * gain + p.noise_power
    } else {
        p.noise_power
    };
    let numerator = p.eh_efficiency * tau * gain_et * signal;
    let denominator = (1.0 - tau) * denom_power;
    numerator / denominator
}

/// Throughput `C = (1 - tau) * log2(1 + sinr)` in bits/s/Hz.
pub fn throughput(f: &FeatureVector, cfg: &PhaseConfig, p: &SystemParams) -> Result<f64, EvalError> {
    throughput_from_parts(f, &cfg.et_phases, &cfg.it_phases, cfg.tau, p)
}

pub fn throughput_from_parts(
    f: &FeatureVector,
    et_phases: &[f64],
    it_phases: &[f64],
    tau: f64,
    p: &SystemParams,
) -> Result<f64, EvalError> {
    let gamma = sinr_from_parts(f, et_phases, it_phases, tau, p)?;
    Ok((1.0 - tau) * ((1.0 + gamma).ln() * INV_LN_2))
}

/// Full report for one configuration.
pub fn evaluate(
    f: &FeatureVector,
    cfg: &PhaseConfig,
    p: &SystemParams,
) -> Result<ThroughputReport, EvalError> {
    let harvested = harvested_energy(f, &cfg.et_phases, cfg.tau, p)?;
    let power = source_power(harvested, cfg.tau, p.coherence_time)?;
    let gamma = sinr(f, cfg, p)?;
    let c = (1.0 - cfg.tau) * ((1.0 + gamma).ln() * INV_LN_2);
    Ok(ThroughputReport { harvested_energy: harvested, source_power: power, sinr: gamma, throughput: c })
}

/// Training loss: negative mean throughput over a batch.
pub fn batch_loss(
    features: &[FeatureVector],
    cfgs: &[PhaseConfig],
    p: &SystemParams,
) -> Result<f64, EvalError> {
    if features.is_empty() || features.len() != cfgs.len() {
        return Err(EvalError::EmptyBatch);
    }
    let mut acc = 0.0;
    for (f, cfg) in features.iter().zip(cfgs) {
        acc += throughput(f, cfg, p)?;
    }
    Ok(-(acc / features.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_features, sample_channels, FeatureVector, SystemParams};
    use crate::rng::SplitMix64;

    fn random_feature(m: usize, n: usize, interference: bool, seed: u64) -> FeatureVector {
        let mut p = SystemParams::new(m, n);
        if interference {
            p.interferer_power = crate::channel::dbm_to_watts(10.0);
        }
        build_features(&sample_channels(&p, &mut SplitMix64::new(seed)), interference)
    }

    fn zero_feature(m: usize, n: usize, interference: bool) -> FeatureVector {
        let len = FeatureVector::feature_len(m, n, interference);
        FeatureVector::from_flat(m, n, interference, vec![0.0; len]).unwrap()
    }

    /// Feature with chosen direct/cascade entries for hand calculations.
    fn manual_feature(v: &[(f64, f64)], a: &[(f64, f64)], u_sd: &[(f64, f64)], h_sd: (f64, f64)) -> FeatureVector {
        let n = u_sd.len();
        let m = a.len();
        assert_eq!(v.len(), n * m);
        let mut data = Vec::new();
        data.extend(v.iter().map(|c| c.0));
        data.extend(v.iter().map(|c| c.1));
        data.extend(a.iter().map(|c| c.0));
        data.extend(a.iter().map(|c| c.1));
        data.extend(u_sd.iter().map(|c| c.0));
        data.extend(u_sd.iter().map(|c| c.1));
        data.push(h_sd.0);
        data.push(h_sd.1);
        FeatureVector::from_flat(m, n, false, data).unwrap()
    }

    #[test]
    fn zero_cascade_leaves_direct_channel() {
        let f = manual_feature(
            &[(0.0, 0.0), (0.0, 0.0)],
            &[(1.5, -0.5)],
            &[(0.0, 0.0), (0.0, 0.0)],
            (0.0, 0.0),
        );
        let h = effective_et_channel(&f, &[0.3, 2.2]).unwrap();
        assert_eq!(h, vec![num_complex::Complex64::new(1.5, -0.5)]);
    }

    #[test]
    fn pi_phase_negates_unit_cascade() {
        let f = manual_feature(&[(1.0, 0.0)], &[(0.0, 0.0)], &[(0.0, 0.0)], (0.0, 0.0));
        let h = effective_et_channel(&f, &[std::f64::consts::PI]).unwrap();
        assert!((h[0].re + 1.0).abs() < 1e-15);
        assert!(h[0].im.abs() < 1e-15);
    }

    #[test]
    fn effective_channel_matches_naive_double_loop() {
        let f = random_feature(2, 3, false, 11);
        let phases = [0.4, 1.9, 5.1];
        let h = effective_et_channel(&f, &phases).unwrap();
        for m in 0..2 {
            let mut want = f.a(m);
            for n in 0..3 {
                let e = num_complex::Complex64::new(phases[n].cos(), phases[n].sin());
                want += e * f.v(n, m);
            }
            assert!((h[m] - want).norm() <= 1e-15 * want.norm().max(1.0));
        }
    }

    #[test]
    fn mrt_scalar_attains_magnitude() {
        let h = vec![num_complex::Complex64::new(3.0, 4.0)];
        let w = mrt_beamformer(&h).unwrap();
        let attained = (h[0] * w[0]).norm();
        assert!((attained - 5.0).abs() < 1e-12);
        assert!((w[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mrt_is_unit_norm_and_beats_random_directions() {
        let mut rng = SplitMix64::new(3);
        let h: Vec<_> = (0..4)
            .map(|_| {
                let (a, b) = rng.next_gaussian_pair();
                num_complex::Complex64::new(a, b)
            })
            .collect();
        let w = mrt_beamformer(&h).unwrap();
        let norm: f64 = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let attained: f64 =
            h.iter().zip(&w).map(|(a, b)| a * b).sum::<num_complex::Complex64>().norm();
        for _ in 0..10_000 {
            let mut u: Vec<_> = (0..4)
                .map(|_| {
                    let (a, b) = rng.next_gaussian_pair();
                    num_complex::Complex64::new(a, b)
                })
                .collect();
            let un: f64 = u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for c in &mut u {
                *c /= un;
            }
            let got: f64 =
                h.iter().zip(&u).map(|(a, b)| a * b).sum::<num_complex::Complex64>().norm();
            assert!(attained >= got - 1e-12);
        }
    }

    #[test]
    fn mrt_rejects_zero_channel() {
        assert!(matches!(
            mrt_beamformer(&[num_complex::Complex64::new(0.0, 0.0)]),
            Err(EvalError::SingularChannel)
        ));
    }

    #[test]
    fn mrt_self_consistency_against_norm_form() {
        // P_B * ||h_eff||^2 equals P_B * |h_eff^T w|^2 for the beamformer.
        for seed in 0..20 {
            let f = random_feature(3, 4, false, seed);
            let phases: Vec<f64> = (0..4).map(|i| i as f64).collect();
            let h = effective_et_channel(&f, &phases).unwrap();
            let w = mrt_beamformer(&h).unwrap();
            let norm_sqr: f64 = h.iter().map(|c| c.norm_sqr()).sum();
            let attained =
                h.iter().zip(&w).map(|(a, b)| a * b).sum::<num_complex::Complex64>().norm_sqr();
            assert!((norm_sqr - attained).abs() <= 1e-12 * norm_sqr);
        }
    }

    #[test]
    fn harvested_energy_hand_case() {
        // eta=1, tau=0.5, T_c=1, P_B=1, single antenna/element, a=1, V=1,
        // theta=0: E = 0.5 * |1 + 1|^2 = 2.
        let f = manual_feature(&[(1.0, 0.0)], &[(1.0, 0.0)], &[(0.0, 0.0)], (0.0, 0.0));
        let mut p = SystemParams::new(1, 1);
        p.pb_power = 1.0;
        let e = harvested_energy(&f, &[0.0], 0.5, &p).unwrap();
        assert!((e - 2.0).abs() < 1e-15);
    }

    #[test]
    fn harvested_energy_zero_and_linearity() {
        let f = zero_feature(2, 3, false);
        let p = SystemParams::new(2, 3);
        assert_eq!(harvested_energy(&f, &[0.0; 3], 0.3, &p).unwrap(), 0.0);

        let f = random_feature(2, 3, false, 5);
        let phases = [1.0, 2.0, 3.0];
        let mut p1 = SystemParams::new(2, 3);
        p1.pb_power = 4.0;
        let mut p2 = p1.clone();
        p2.pb_power = 8.0;
        let e1 = harvested_energy(&f, &phases, 0.4, &p1).unwrap();
        let e2 = harvested_energy(&f, &phases, 0.4, &p2).unwrap();
        assert!((e2 - 2.0 * e1).abs() <= 1e-15 * e2.abs());
    }

    #[test]
    fn source_power_cases() {
        assert_eq!(source_power(1.0, 0.5, 1.0).unwrap(), 2.0);
        assert_eq!(source_power(0.0, 0.25, 1.0).unwrap(), 0.0);
        assert!(matches!(source_power(1.0, 1.0, 1.0), Err(EvalError::DegenerateSplit(_))));
        assert!(matches!(source_power(1.0, 0.0, 1.0), Err(EvalError::DegenerateSplit(_))));
    }

    #[test]
    fn coherence_time_cancels_in_sinr() {
        let f = random_feature(2, 4, false, 21);
        let cfg = PhaseConfig::new(vec![0.1; 4], vec![0.7; 4], 0.37).unwrap();
        let mut p1 = SystemParams::new(2, 4);
        p1.coherence_time = 1.0;
        let mut p2 = p1.clone();
        p2.coherence_time = 0.01;
        let g1 = sinr(&f, &cfg, &p1).unwrap();
        let g2 = sinr(&f, &cfg, &p2).unwrap();
        assert_eq!(g1, g2);
        // And the explicit E_s -> P_S chain reproduces it.
        let e = harvested_energy(&f, &cfg.et_phases, cfg.tau, &p2).unwrap();
        let ps = source_power(e, cfg.tau, p2.coherence_time).unwrap();
        let signal = {
            let (c, s) = trig_tables(&cfg.it_phases);
            combined_gain(f.h_sd(), f.u_sd_re(), f.u_sd_im(), &c, &s)
        };
        let manual = ps * signal / p2.noise_power;
        assert!((manual - g1).abs() <= 1e-12 * g1);
    }

    #[test]
    fn noise_limited_denominator() {
        // With P_I = 0 the denominator reduces to (1 - tau) * noise even if
        // the features carry interferer blocks.
        let f = random_feature(2, 3, true, 8);
        let p = SystemParams::new(2, 3); // interferer_power = 0
        let cfg = PhaseConfig::new(vec![0.2; 3], vec![1.2; 3], 0.5).unwrap();
        let gamma = sinr(&f, &cfg, &p).unwrap();

        let (ec, es) = trig_tables(&cfg.et_phases);
        let (ic, is) = trig_tables(&cfg.it_phases);
        let num = p.eh_efficiency
            * cfg.tau
            * et_gain(&f, &ec, &es, &p)
            * combined_gain(f.h_sd(), f.u_sd_re(), f.u_sd_im(), &ic, &is);
        let want = num / ((1.0 - cfg.tau) * p.noise_power);
        assert_eq!(gamma, want);
    }

    #[test]
    fn zero_information_channel_zero_sinr() {
        let f = manual_feature(&[(1.0, 2.0)], &[(0.5, 0.1)], &[(0.0, 0.0)], (0.0, 0.0));
        let p = SystemParams::new(1, 1);
        let cfg = PhaseConfig::new(vec![0.4], vec![2.2], 0.6).unwrap();
        assert_eq!(sinr(&f, &cfg, &p).unwrap(), 0.0);
        assert_eq!(throughput(&f, &cfg, &p).unwrap(), 0.0);
    }

    #[test]
    fn mode_mismatch_detected() {
        let f = random_feature(2, 3, false, 9);
        let mut p = SystemParams::new(2, 3);
        p.interferer_power = 0.01;
        let cfg = PhaseConfig::new(vec![0.0; 3], vec![0.0; 3], 0.5).unwrap();
        assert!(matches!(sinr(&f, &cfg, &p), Err(EvalError::ModeMismatch)));
    }

    #[test]
    fn throughput_closed_form_points() {
        // gamma = 1 at tau = 0.5 gives C = 0.5.
        let f = manual_feature(&[(0.0, 0.0)], &[(1.0, 0.0)], &[(1.0, 0.0)], (0.0, 0.0));
        let mut p = SystemParams::new(1, 1);
        p.pb_power = 1.0;
        p.noise_power = 1.0;
        // et_gain = |a|^2 = 1, signal = |u_sd|^2 = 1 -> gamma = tau/(1-tau).
        let cfg = PhaseConfig::new(vec![0.0], vec![0.0], 0.5).unwrap();
        let r = evaluate(&f, &cfg, &p).unwrap();
        assert!((r.sinr - 1.0).abs() < 1e-15);
        assert!((r.throughput - 0.5).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_matches_per_sample_mean() {
        let p = SystemParams::new(2, 4);
        let features: Vec<_> = (0..8).map(|s| random_feature(2, 4, false, 100 + s)).collect();
        let cfgs: Vec<_> = (0..8)
            .map(|i| {
                PhaseConfig::new(
                    vec![0.3 * i as f64; 4],
                    vec![0.5 + 0.2 * i as f64; 4],
                    0.2 + 0.05 * i as f64,
                )
                .unwrap()
            })
            .collect();
        let loss = batch_loss(&features, &cfgs, &p).unwrap();
        let mut acc = 0.0;
        for (f, c) in features.iter().zip(&cfgs) {
            acc += throughput(f, c, &p).unwrap();
        }
        let want = -(acc / 8.0);
        assert!((loss - want).abs() < 1e-14);

        // Batch of one is just the negated throughput; k identical samples
        // give the same loss as one.
        let one = batch_loss(&features[..1], &cfgs[..1], &p).unwrap();
        assert_eq!(one, -throughput(&features[0], &cfgs[0], &p).unwrap());
        let rep_f = vec![features[0].clone(); 5];
        let rep_c = vec![cfgs[0].clone(); 5];
        let rep = batch_loss(&rep_f, &rep_c, &p).unwrap();
        assert!((rep - one).abs() < 1e-15);

        assert!(matches!(batch_loss(&[], &[], &p), Err(EvalError::EmptyBatch)));
    }

    #[test]
    fn phase_periodicity() {
        let f = random_feature(2, 4, true, 33);
        let p = SystemParams::with_interferer_dbm(2, 4, 10.0);
        let cfg = PhaseConfig::new(vec![0.9, 1.7, 2.5, 3.3], vec![0.2, 4.4, 5.5, 0.1], 0.41).unwrap();
        let base = throughput(&f, &cfg, &p).unwrap();
        for i in 0..4 {
            let mut shifted = cfg.clone();
            shifted.et_phases[i] += std::f64::consts::TAU;
            let c = throughput(&f, &shifted, &p).unwrap();
            assert!((c - base).abs() <= 1e-12 * base.abs().max(1e-300), "et {i}");
            let mut shifted = cfg.clone();
            shifted.it_phases[i] += std::f64::consts::TAU;
            let c = throughput(&f, &shifted, &p).unwrap();
            assert!((c - base).abs() <= 1e-12 * base.abs().max(1e-300), "it {i}");
        }
    }

    #[test]
    fn boundary_throughput_vanishes() {
        for seed in 0..10 {
            let f = random_feature(2, 8, false, 200 + seed);
            let p = SystemParams::new(2, 8);
            for tau in [1e-9, 1.0 - 1e-9] {
                let cfg = PhaseConfig::new(vec![0.0; 8], vec![0.0; 8], tau).unwrap();
                let c = throughput(&f, &cfg, &p).unwrap();
                assert!(c < 1e-6, "tau {tau} gave C = {c}");
                assert!(c >= 0.0);
            }
        }
    }

    #[test]
    fn throughput_monotone_in_beacon_power() {
        let mut rng = SplitMix64::new(17);
        for seed in 0..20 {
            let f = random_feature(2, 4, false, 300 + seed);
            let cfg = PhaseConfig::new(
                (0..4).map(|_| rng.next_range(0.0, std::f64::consts::TAU)).collect(),
                (0..4).map(|_| rng.next_range(0.0, std::f64::consts::TAU)).collect(),
                rng.next_range(0.1, 0.9),
            )
            .unwrap();
            let mut last = -1.0;
            for pb in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
                let mut p = SystemParams::new(2, 4);
                p.pb_power = pb;
                let c = throughput(&f, &cfg, &p).unwrap();
                assert!(c >= last, "pb {pb}: {c} < {last}");
                last = c;
            }
        }
    }

    #[test]
    fn canonicalize_wraps_and_clamps() {
        let mut cfg = PhaseConfig::new(vec![-0.1, 7.0], vec![13.0, 0.0], 0.5).unwrap();
        cfg.tau = 1e-12; // out-of-margin value set after construction
        cfg.canonicalize();
        for p in cfg.et_phases.iter().chain(cfg.it_phases.iter()) {
            assert!((0.0..std::f64::consts::TAU).contains(p));
        }
        assert_eq!(cfg.tau, TAU_MARGIN);
        assert_eq!(wrap_phase(std::f64::consts::TAU), 0.0);
    }

    #[test]
    fn degenerate_tau_rejected() {
        let f = random_feature(1, 2, false, 4);
        let p = SystemParams::new(1, 2);
        for tau in [0.0, 1.0, 1.5, -0.2] {
            let err = sinr_from_parts(&f, &[0.0; 2], &[0.0; 2], tau, &p);
            assert!(matches!(err, Err(EvalError::DegenerateSplit(_))), "tau {tau}");
        }
        assert!(PhaseConfig::new(vec![0.0], vec![0.0], 1.0).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let f = random_feature(2, 3, false, 4);
        let p = SystemParams::new(2, 3);
        assert!(matches!(
            sinr_from_parts(&f, &[0.0; 2], &[0.0; 3], 0.5, &p),
            Err(EvalError::Dimension { .. })
        ));
        assert!(matches!(
            effective_et_channel(&f, &[0.0; 4]),
            Err(EvalError::Dimension { .. })
        ));
    }
}
