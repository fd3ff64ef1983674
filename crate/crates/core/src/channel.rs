//! Link-level channel model: dense-clutter indoor-factory path loss, LOS
//! probability, log-normal shadowing, per-TTI fading, and the SINR
//! computation with co-channel interference.
//!
//! The fast-fading term is an i.i.d. per-TTI exponential power gain with unit
//! mean (Rayleigh envelope) multiplied onto the received power; the full
//! cluster/ray response is deliberately out of scope. Antenna arrays are
//! abstracted into one fixed combining-gain constant.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use thiserror::Error;

use crate::scenario::{Direction, Point3, RadioParams};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Reference noise temperature, K.
pub const NOISE_TEMPERATURE_K: f64 = 290.0;
/// Sentinel for degenerate SINR inputs.
pub const SINR_FLOOR_DB: f64 = f64::NEG_INFINITY;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("channel domain error: {0}")]
    Domain(&'static str),
}

/// Geometry of one device–gNB link.
#[derive(Debug, Clone, Copy)]
pub struct LinkGeometry {
    /// Ground distance, meters.
    pub d_2d: f64,
    /// 3D distance, meters.
    pub d_3d: f64,
    /// Carrier frequency, GHz.
    pub f_c: f64,
    pub h_gnb: f64,
    pub h_device: f64,
    pub h_clut: f64,
    pub d_clut: f64,
    /// Clutter density, fraction in (0, 1).
    pub r_clut: f64,
}

impl LinkGeometry {
    /// Builds the link geometry between a device and a gNB position.
    pub fn between(device: Point3, gnb: Point3, radio: &RadioParams) -> Self {
        let dx = device[0] - gnb[0];
        let dy = device[1] - gnb[1];
        let dz = device[2] - gnb[2];
        let d_2d = (dx * dx + dy * dy).sqrt();
        let d_3d = (dx * dx + dy * dy + dz * dz).sqrt();
        LinkGeometry {
            d_2d,
            d_3d,
            f_c: radio.carrier_ghz,
            h_gnb: gnb[2],
            h_device: device[2],
            h_clut: radio.clutter.h_m,
            d_clut: radio.clutter.d_m,
            r_clut: radio.clutter.r,
        }
    }
}

/// Line-of-sight path loss in dB.
pub fn path_loss_los(geom: &LinkGeometry) -> Result<f64, ChannelError> {
    if geom.d_3d <= 0.0 {
        return Err(ChannelError::Domain("d_3d must be > 0"));
    }
    if geom.f_c <= 0.0 {
        return Err(ChannelError::Domain("f_c must be > 0"));
    }
    Ok(31.84 + 21.5 * geom.d_3d.log10() + 19.0 * geom.f_c.log10())
}

/// Non-line-of-sight path loss in dB: the dense-clutter term floored by LOS.
pub fn path_loss_nlos(geom: &LinkGeometry) -> Result<f64, ChannelError> {
    let los = path_loss_los(geom)?;
    let dh = 33.63 + 21.9 * geom.d_3d.log10() + 20.0 * geom.f_c.log10();
    Ok(los.max(dh))
}

/// LOS probability at ground distance `d_2d`, clamped to [0, 1].
pub fn los_probability(geom: &LinkGeometry) -> Result<f64, ChannelError> {
    if !(geom.r_clut > 0.0 && geom.r_clut < 1.0) {
        return Err(ChannelError::Domain("r_clut must be in (0, 1)"));
    }
    if geom.h_gnb == geom.h_device {
        return Err(ChannelError::Domain("h_gnb must differ from h_device"));
    }
    let exponent = geom.d_2d * (1.0 - geom.r_clut).ln() * (geom.h_clut - geom.h_device)
        / (geom.d_clut * (geom.h_gnb - geom.h_device));
    Ok(exponent.exp().clamp(0.0, 1.0))
}

/// Smoothing weight of the filtered SINR estimate used for link adaptation.
const SINR_FILTER_WEIGHT: f64 = 0.25;
/// Outer-loop link adaptation: margin added per NACK, dB.
const OLLA_STEP_UP_DB: f64 = 0.5;
/// Initial adaptation margin, dB.
const OLLA_INITIAL_DB: f64 = 3.0;
const OLLA_MIN_DB: f64 = -5.0;
const OLLA_MAX_DB: f64 = 25.0;

/// Resolved large-scale state of one link, fixed for a run.
#[derive(Debug, Clone, Copy)]
pub struct LinkState {
    pub los: bool,
    pub shadowing_db: f64,
    pub path_loss_db: f64,
    /// Latest measured SINR per direction, dB.
    pub last_sinr_db: [Option<f64>; 2],
    /// Exponentially smoothed SINR per direction, dB; drives rate selection.
    pub filtered_sinr_db: [Option<f64>; 2],
    /// Outer-loop link-adaptation back-off per direction, dB. Grows on
    /// failed blocks and shrinks on successes so the realized block error
    /// rate converges to the configured target.
    pub olla_offset_db: [f64; 2],
}

impl LinkState {
    /// Draws LOS and shadowing for a link; one draw per link per run.
    pub fn draw(geom: &LinkGeometry, sigma: &crate::scenario::ShadowingSigma, rng: &mut ChaCha12Rng) -> Result<Self, ChannelError> {
        let p_los = los_probability(geom)?;
        let los = rng.gen::<f64>() < p_los;
        let std_dev = if los { sigma.los } else { sigma.nlos };
        let shadowing_db = std_dev * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
        let path_loss_db =
            if los { path_loss_los(geom)? } else { path_loss_nlos(geom)? };
        Ok(LinkState {
            los,
            shadowing_db,
            path_loss_db,
            last_sinr_db: [None; 2],
            filtered_sinr_db: [None; 2],
            olla_offset_db: [OLLA_INITIAL_DB; 2],
        })
    }

    /// Total large-scale attenuation in dB (path loss plus shadowing).
    pub fn total_loss_db(&self) -> f64 {
        self.path_loss_db + self.shadowing_db
    }

    /// Linear power gain of the link including a receive combining gain.
    pub fn linear_gain(&self, combining_gain_db: f64) -> f64 {
        db_to_linear(combining_gain_db - self.total_loss_db())
    }

    pub fn record_sinr(&mut self, dir: Direction, sinr_db: f64) {
        let d = dir.index();
        self.last_sinr_db[d] = Some(sinr_db);
        self.filtered_sinr_db[d] = Some(match self.filtered_sinr_db[d] {
            None => sinr_db,
            Some(f) => (1.0 - SINR_FILTER_WEIGHT) * f + SINR_FILTER_WEIGHT * sinr_db,
        });
    }

    /// Rate-selection estimate: the smoothed measurement minus the
    /// adaptation back-off. `None` before the first measurement.
    pub fn adapted_estimate_db(&self, dir: Direction) -> Option<f64> {
        let d = dir.index();
        self.filtered_sinr_db[d].map(|f| f - self.olla_offset_db[d])
    }

    /// Block-outcome feedback: asymmetric steps hold the long-run error
    /// rate at `target_bler`.
    pub fn link_adapt_feedback(&mut self, dir: Direction, success: bool, target_bler: f64) {
        let d = dir.index();
        let step_down = OLLA_STEP_UP_DB * target_bler / (1.0 - target_bler).max(1e-6);
        let delta = if success { -step_down } else { OLLA_STEP_UP_DB };
        self.olla_offset_db[d] = (self.olla_offset_db[d] + delta).clamp(OLLA_MIN_DB, OLLA_MAX_DB);
    }
}

/// One per-TTI fading draw: exponential power gain with unit mean.
pub fn fading_gain(rng: &mut ChaCha12Rng) -> f64 {
    <Exp1 as Distribution<f64>>::sample(&Exp1, rng)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    if linear <= 0.0 {
        SINR_FLOOR_DB
    } else {
        10.0 * linear.log10()
    }
}

/// Thermal noise power over `bandwidth_hz`, scaled by the noise figure.
pub fn noise_power_w(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    BOLTZMANN * NOISE_TEMPERATURE_K * bandwidth_hz * db_to_linear(noise_figure_db)
}

/// SINR in dB of a transmission against thermal noise plus the received
/// powers of co-scheduled interferers.
///
/// `interferers` holds `(link, tx_power_w)` pairs for transmissions on the
/// same resource in other cells during the same TTI. Degenerate inputs yield
/// the `-inf` sentinel instead of an error.
pub fn sinr_db(
    link: &LinkState,
    tx_power_w: f64,
    interferers: &[(LinkState, f64)],
    bandwidth_hz: f64,
    noise_figure_db: f64,
) -> f64 {
    if bandwidth_hz <= 0.0 || tx_power_w <= 0.0 {
        return SINR_FLOOR_DB;
    }
    let signal = tx_power_w * db_to_linear(-link.total_loss_db());
    let mut denom = noise_power_w(bandwidth_hz, noise_figure_db);
    for (ilink, ipower) in interferers {
        if *ipower > 0.0 {
            denom += ipower * db_to_linear(-ilink.total_loss_db());
        }
    }
    linear_to_db(signal / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{derive_stream, ShadowingSigma};
    use approx::assert_abs_diff_eq;

    fn geom(d_2d: f64, d_3d: f64, f_c: f64) -> LinkGeometry {
        LinkGeometry {
            d_2d,
            d_3d,
            f_c,
            h_gnb: 8.0,
            h_device: 1.5,
            h_clut: 6.0,
            d_clut: 2.0,
            r_clut: 0.6,
        }
    }

    fn flat_link(path_loss_db: f64) -> LinkState {
        LinkState {
            los: true,
            shadowing_db: 0.0,
            path_loss_db,
            last_sinr_db: [None; 2],
            filtered_sinr_db: [None; 2],
            olla_offset_db: [0.0; 2],
        }
    }

    #[test]
    fn los_path_loss_at_ten_meters() {
        let pl = path_loss_los(&geom(10.0, 10.0, 2.6)).unwrap();
        assert_abs_diff_eq!(pl, 61.22, epsilon = 0.01);
    }

    #[test]
    fn los_path_loss_log_terms_vanish() {
        let pl = path_loss_los(&geom(1.0, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(pl, 31.84, epsilon = 1e-12);
    }

    #[test]
    fn los_path_loss_monotone_in_distance() {
        for f in [0.7, 2.6, 28.0] {
            let near = path_loss_los(&geom(10.0, 10.0, f)).unwrap();
            let far = path_loss_los(&geom(20.0, 20.0, f)).unwrap();
            assert!(far > near);
        }
    }

    #[test]
    fn nlos_path_loss_at_ten_meters() {
        let pl = path_loss_nlos(&geom(10.0, 10.0, 2.6)).unwrap();
        assert_abs_diff_eq!(pl, 63.83, epsilon = 0.01);
    }

    #[test]
    fn nlos_dominates_los() {
        for d in [1.0, 5.0, 17.0, 120.0] {
            let g = geom(d, d, 2.6);
            assert!(path_loss_nlos(&g).unwrap() >= path_loss_los(&g).unwrap());
        }
    }

    #[test]
    fn nlos_log_terms_vanish() {
        let pl = path_loss_nlos(&geom(1.0, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(pl, 33.63, epsilon = 1e-12);
    }

    #[test]
    fn path_loss_rejects_zero_distance() {
        assert!(path_loss_los(&geom(0.0, 0.0, 2.6)).is_err());
    }

    #[test]
    fn los_probability_is_one_at_zero_distance() {
        assert_abs_diff_eq!(los_probability(&geom(0.0, 6.5, 2.6)).unwrap(), 1.0);
    }

    #[test]
    fn los_probability_reference_point() {
        // exp(10 * ln(0.4) * 4.5 / (2 * 6.5)) = exp(-3.1718)
        let p = los_probability(&geom(10.0, 11.9, 2.6)).unwrap();
        assert_abs_diff_eq!(p, 0.0419, epsilon = 1e-3);
    }

    #[test]
    fn los_probability_vanishes_at_distance() {
        let p = los_probability(&geom(1.0e6, 1.0e6, 2.6)).unwrap();
        assert!(p < 1e-12);
    }

    #[test]
    fn los_probability_rejects_bad_clutter_density() {
        let mut g = geom(5.0, 6.0, 2.6);
        g.r_clut = 1.0;
        assert!(los_probability(&g).is_err());
    }

    #[test]
    fn snr_without_interference_matches_thermal_noise_arithmetic() {
        // Oracle: 10*log10(1 / (k * 290 K * 40 MHz * 10^0.9)).
        let oracle =
            10.0 * (1.0 / (BOLTZMANN * 290.0 * 4.0e7 * 10f64.powf(0.9))).log10();
        assert_abs_diff_eq!(oracle, 118.95, epsilon = 0.01);
        let snr = sinr_db(&flat_link(0.0), 1.0, &[], 4.0e7, 9.0);
        assert_abs_diff_eq!(snr, oracle, epsilon = 0.5);
    }

    #[test]
    fn symmetric_interferer_gives_zero_db() {
        let link = flat_link(60.0);
        let sinr = sinr_db(&link, 0.5, &[(link, 0.5)], 1.0, 0.0);
        assert_abs_diff_eq!(sinr, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn interference_strictly_decreases_sinr() {
        let link = flat_link(70.0);
        let mut interferers = Vec::new();
        let mut last = sinr_db(&link, 0.5, &interferers, 4.0e7, 9.0);
        for _ in 0..4 {
            interferers.push((flat_link(85.0), 0.25));
            let now = sinr_db(&link, 0.5, &interferers, 4.0e7, 9.0);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn sinr_monotone_in_interferer_power_and_own_loss() {
        let link = flat_link(70.0);
        let weak = sinr_db(&link, 0.5, &[(flat_link(85.0), 0.1)], 4.0e7, 9.0);
        let strong = sinr_db(&link, 0.5, &[(flat_link(85.0), 0.4)], 4.0e7, 9.0);
        assert!(strong < weak);
        let more_loss = sinr_db(&flat_link(80.0), 0.5, &[(flat_link(85.0), 0.1)], 4.0e7, 9.0);
        assert!(more_loss < weak);
    }

    #[test]
    fn degenerate_inputs_yield_sentinel() {
        let link = flat_link(70.0);
        assert_eq!(sinr_db(&link, 0.0, &[], 4.0e7, 9.0), SINR_FLOOR_DB);
        assert_eq!(sinr_db(&link, 1.0, &[], 0.0, 9.0), SINR_FLOOR_DB);
    }

    #[test]
    fn shadowing_std_dev_tracks_configuration() {
        let sigma = ShadowingSigma { los: 4.3, nlos: 4.0 };
        let mut rng = derive_stream(42, "channel");
        let g = geom(2.0, 6.8, 2.6);
        let mut los_draws = Vec::new();
        let mut nlos_draws = Vec::new();
        while los_draws.len() < 10_000 || nlos_draws.len() < 10_000 {
            let state = LinkState::draw(&g, &sigma, &mut rng).unwrap();
            if state.los {
                los_draws.push(state.shadowing_db);
            } else {
                nlos_draws.push(state.shadowing_db);
            }
        }
        for (draws, expect) in [(&los_draws, sigma.los), (&nlos_draws, sigma.nlos)] {
            let n = draws.len() as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            assert!(
                (std - expect).abs() / expect < 0.05,
                "std {std} vs configured {expect}"
            );
        }
    }

    #[test]
    fn fading_has_unit_mean() {
        let mut rng = derive_stream(3, "fading");
        let n = 200_000;
        let mean = (0..n).map(|_| fading_gain(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean fading gain {mean}");
    }
}
