//! Power-delay profiles and the mapping from physical delays to taps.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameGeometry;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileTap {
    pub delay_ns: f64,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDelayProfile {
    pub name: String,
    pub taps: Vec<ProfileTap>,
}

impl PowerDelayProfile {
    /// 3GPP Extended Vehicular A.
    pub fn eva() -> Self {
        Self::from_csv_reader("EVA", include_str!("../../profiles/eva.csv").as_bytes())
            .expect("bundled EVA table parses")
    }

    /// 3GPP Extended Pedestrian A.
    pub fn epa() -> Self {
        Self::from_csv_reader("EPA", include_str!("../../profiles/epa.csv").as_bytes())
            .expect("bundled EPA table parses")
    }

    pub fn single_path() -> Self {
        Self {
            name: "single".into(),
            taps: vec![ProfileTap {
                delay_ns: 0.0,
                power_db: 0.0,
            }],
        }
    }

    /// Read a `delay_ns,power_db` table with a header row.
    pub fn from_csv_reader<R: Read>(name: &str, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let taps = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ProfileTap>, _>>()?;
        let p = Self {
            name: name.to_string(),
            taps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::Profile(format!("profile {} has no taps", self.name)));
        }
        for t in &self.taps {
            if !(t.delay_ns >= 0.0) || !t.delay_ns.is_finite() || !t.power_db.is_finite() {
                return Err(Error::Profile(format!(
                    "profile {}: bad tap ({}, {})",
                    self.name, t.delay_ns, t.power_db
                )));
            }
        }
        Ok(())
    }

    pub fn max_delay_ns(&self) -> f64 {
        self.taps.iter().map(|t| t.delay_ns).fold(0.0, f64::max)
    }

    /// Rescale delays so the longest one lands exactly on tap `l_max` of `geometry`.
    pub fn scaled_to(&self, geometry: &FrameGeometry) -> Self {
        let max = self.max_delay_ns();
        let target = geometry.l_max as f64 * geometry.sample_interval() * 1e9;
        let k = if max > 0.0 { target / max } else { 1.0 };
        Self {
            name: format!("{}-scaled", self.name),
            taps: self
                .taps
                .iter()
                .map(|t| ProfileTap {
                    delay_ns: t.delay_ns * k,
                    power_db: t.power_db,
                })
                .collect(),
        }
    }

    /// Path delays in units of `T / M`.
    pub fn delay_taps(&self, geometry: &FrameGeometry) -> Vec<f64> {
        let ts = geometry.sample_interval();
        self.taps.iter().map(|t| t.delay_ns * 1e-9 / ts).collect()
    }

    /// Largest delay rounded to the nearest tap.
    pub fn required_l_max(&self, m: usize, subcarrier_spacing_hz: f64) -> usize {
        let ts = 1.0 / (m as f64 * subcarrier_spacing_hz);
        (self.max_delay_ns() * 1e-9 / ts).round() as usize
    }

    /// Linear powers normalized to unit sum.
    pub fn normalized_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.taps.iter().map(|t| 10f64.powf(t.power_db / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.into_iter().map(|p| p / total).collect()
    }
}

/// Maximum Doppler shift in Hz.
pub fn max_doppler_hz(speed_kmh: f64, carrier_hz: f64) -> f64 {
    speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT
}

/// Maximum Doppler in units of the Doppler resolution `delta_f / N`.
pub fn max_doppler_taps(speed_kmh: f64, carrier_hz: f64, geometry: &FrameGeometry) -> f64 {
    max_doppler_hz(speed_kmh, carrier_hz) * geometry.n as f64 / geometry.subcarrier_spacing_hz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eva_table() {
        let p = PowerDelayProfile::eva();
        assert_eq!(p.taps.len(), 9);
        assert_eq!(p.max_delay_ns(), 2510.0);
        assert!((p.normalized_powers().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(PowerDelayProfile::epa().taps.len(), 7);
    }

    #[test]
    fn full_scale_taps() {
        let g = FrameGeometry::new(512, 128, 19, 15e3).unwrap();
        assert_eq!(PowerDelayProfile::eva().required_l_max(512, 15e3), 19);
        let k = max_doppler_taps(120.0, 4e9, &g);
        assert!((k - 3.79).abs() < 0.01, "{k}");
    }

    #[test]
    fn scaling_hits_l_max() {
        let g = FrameGeometry::new(64, 16, 7, 15e3).unwrap();
        let d = PowerDelayProfile::eva().scaled_to(&g).delay_taps(&g);
        assert!((d[8] - 7.0).abs() < 1e-9);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(PowerDelayProfile::from_csv_reader("x", "delay_ns,power_db\n".as_bytes()).is_err());
        assert!(PowerDelayProfile::from_csv_reader("x", "delay_ns,power_db\n-1,0\n".as_bytes()).is_err());
        assert!(PowerDelayProfile::from_csv_reader("x", "delay_ns,power_db\nfoo,0\n".as_bytes()).is_err());
    }
}
