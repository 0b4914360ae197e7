//! Shannon path capacity under the incoherent GN model at optimum launch power.
//!
//! Every link contributes an additive noise-to-signal ratio (NSR). A path of
//! links with NSRs `n_i` carries `2 * Rs * log2(1 + 1 / sum(n_i))` Gbps, the
//! factor two accounting for dual polarization at Nyquist signalling.
//!
//! Per-link NSRs come from an [`NsrModel`]: either a calibration table or a
//! closed-form GN evaluation whose coefficients all come from configuration.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::topology::Topology;

const PLANCK: f64 = 6.626_070_15e-34;
const LIGHT_SPEED: f64 = 299_792_458.0;

/// Transceiver grid: symbol rate, channel width and channel count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionConfig {
    pub symbol_rate_gbaud: f64,
    pub channel_width_ghz: f64,
    pub channel_count: usize,
    pub total_bandwidth_thz: f64,
}

impl Default for TransmissionConfig {
    fn default() -> Self {
        Self::with_channels(100)
    }
}

impl TransmissionConfig {
    /// 100 GBd / 100 GHz channels, `channels` of them.
    pub fn with_channels(channels: usize) -> Self {
        Self {
            symbol_rate_gbaud: 100.0,
            channel_width_ghz: 100.0,
            channel_count: channels,
            total_bandwidth_thz: channels as f64 * 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_count == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        if !(self.symbol_rate_gbaud.is_finite() && self.symbol_rate_gbaud > 0.0) {
            return Err(Error::Config("symbol rate must be positive".into()));
        }
        if (self.channel_width_ghz - self.symbol_rate_gbaud).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "channel width {} GHz must equal symbol rate {} GBd",
                self.channel_width_ghz, self.symbol_rate_gbaud
            )));
        }
        let grid_thz = self.channel_count as f64 * self.channel_width_ghz / 1000.0;
        if (grid_thz - self.total_bandwidth_thz).abs() > 1e-9 * grid_thz.max(1.0) {
            return Err(Error::Config(format!(
                "{} x {} GHz does not fill {} THz",
                self.channel_count, self.channel_width_ghz, self.total_bandwidth_thz
            )));
        }
        Ok(())
    }
}

/// Fiber and amplifier coefficients for the closed-form GN evaluation.
///
/// Links are split into `ceil(length / span_length_km)` identical spans,
/// each followed by an amplifier with the given noise figure. Launch power is
/// set per span to the value minimising ASE plus NLI noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnParams {
    pub span_length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Group velocity dispersion, ps^2/km (magnitude is used).
    pub beta2_ps2_per_km: f64,
    /// Nonlinear coefficient, 1/(W km).
    pub gamma_per_w_km: f64,
    pub noise_figure_db: f64,
    pub wavelength_nm: f64,
}

impl GnParams {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("span_length_km", self.span_length_km),
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("gamma_per_w_km", self.gamma_per_w_km),
            ("wavelength_nm", self.wavelength_nm),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Nsr(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta2_ps2_per_km.is_finite() && self.beta2_ps2_per_km != 0.0) {
            return Err(Error::Nsr("beta2 must be non-zero".into()));
        }
        if !self.noise_figure_db.is_finite() {
            return Err(Error::Nsr("noise figure must be finite".into()));
        }
        Ok(())
    }

    /// NSR of one span at optimum launch power.
    pub fn span_nsr(&self, config: &TransmissionConfig) -> f64 {
        let alpha = self.attenuation_db_per_km / (10.0 * std::f64::consts::LOG10_E) / 1e3; // 1/m
        let span = self.span_length_km * 1e3;
        let beta2 = self.beta2_ps2_per_km.abs() * 1e-27; // s^2/m
        let gamma = self.gamma_per_w_km * 1e-3; // 1/(W m)
        let rs = config.symbol_rate_gbaud * 1e9;
        let bandwidth = config.total_bandwidth_thz * 1e12;

        let gain = (alpha * span).exp();
        let l_eff = (1.0 - (-alpha * span).exp()) / alpha;
        let l_eff_a = 1.0 / alpha;
        let asinh_arg = PI * PI / 2.0 * beta2 * l_eff_a * bandwidth * bandwidth;
        let eta_psd = 8.0 / 27.0 * gamma * gamma * l_eff * l_eff * asinh_arg.asinh()
            / (PI * beta2 * l_eff_a);
        // per-channel NLI coefficient: P_nli = eta * P^3
        let eta = eta_psd / (rs * rs);

        let nu = LIGHT_SPEED / (self.wavelength_nm * 1e-9);
        let nf = 10f64.powf(self.noise_figure_db / 10.0);
        let p_ase = nf * PLANCK * nu * (gain - 1.0) * rs;

        1.5 * p_ase.powf(2.0 / 3.0) * (2.0 * eta).cbrt()
    }

    pub fn span_count(&self, length_km: f64) -> usize {
        ((length_km / self.span_length_km) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Source of per-link noise-to-signal ratios.
#[derive(Debug, Clone, PartialEq)]
pub enum NsrModel {
    /// One NSR per link index.
    TableDriven(Vec<f64>),
    /// Uniform fiber: NSR proportional to link length.
    PerKm(f64),
    ClosedFormGn(GnParams),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NsrFile {
    links: Option<Vec<NsrLinkRecord>>,
    per_km_nsr: Option<f64>,
    closed_form_gn: Option<GnParams>,
    #[allow(dead_code)]
    provenance: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NsrLinkRecord {
    a: String,
    b: String,
    nsr: f64,
}

impl NsrModel {
    /// Parses an NSR calibration file against `topology`.
    ///
    /// Accepts `{"links": [{"a","b","nsr"}]}`, `{"per_km_nsr": x}` or
    /// `{"closed_form_gn": {...}}`; exactly one must be present.
    pub fn from_json(text: &str, topology: &Topology) -> Result<Self> {
        let file: NsrFile = serde_json::from_str(text)?;
        let model = match (file.links, file.per_km_nsr, file.closed_form_gn) {
            (Some(records), None, None) => {
                let mut table = vec![f64::NAN; topology.link_count()];
                for r in records {
                    let (a, b) = match (topology.node_index(&r.a), topology.node_index(&r.b)) {
                        (Some(a), Some(b)) => (a, b),
                        _ => return Err(Error::Nsr(format!("unknown node in {}-{}", r.a, r.b))),
                    };
                    let link = topology
                        .link_between(a, b)
                        .ok_or_else(|| Error::Nsr(format!("no link {}-{}", r.a, r.b)))?;
                    table[link] = r.nsr;
                }
                NsrModel::TableDriven(table)
            }
            (None, Some(per_km), None) => NsrModel::PerKm(per_km),
            (None, None, Some(gn)) => NsrModel::ClosedFormGn(gn),
            _ => {
                return Err(Error::Nsr(
                    "expected exactly one of links, per_km_nsr, closed_form_gn".into(),
                ))
            }
        };
        model.link_nsrs(topology, &TransmissionConfig::default())?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>, topology: &Topology) -> Result<Self> {
        Self::from_json(&read_file(path.as_ref())?, topology)
    }

    /// Resolves one NSR per link of `topology`.
    pub fn link_nsrs(&self, topology: &Topology, config: &TransmissionConfig) -> Result<LinkNsr> {
        let values = match self {
            NsrModel::TableDriven(table) => {
                if table.len() != topology.link_count() {
                    return Err(Error::Nsr(format!(
                        "table has {} entries for {} links",
                        table.len(),
                        topology.link_count()
                    )));
                }
                table.clone()
            }
            NsrModel::PerKm(per_km) => topology
                .links()
                .iter()
                .map(|l| per_km * l.length_km)
                .collect(),
            NsrModel::ClosedFormGn(gn) => {
                gn.validate()?;
                let span = gn.span_nsr(config);
                topology
                    .links()
                    .iter()
                    .map(|l| gn.span_count(l.length_km) as f64 * span)
                    .collect()
            }
        };
        LinkNsr::new(values)
    }
}

/// Validated per-link NSR values, indexed by link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkNsr(Vec<f64>);

impl LinkNsr {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::Nsr(format!("link {i} has invalid NSR {v}")));
            }
        }
        Ok(Self(values))
    }

    pub fn get(&self, link: usize) -> Option<f64> {
        self.0.get(link).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Capacity in Gbps of a lightpath over `links`.
pub fn path_capacity(links: &[usize], nsr: &LinkNsr, config: &TransmissionConfig) -> Result<f64> {
    if links.is_empty() {
        return Err(Error::Nsr("empty path".into()));
    }
    let mut total = 0.0;
    for &link in links {
        total += nsr
            .get(link)
            .ok_or_else(|| Error::Nsr(format!("no NSR for link {link}")))?;
    }
    Ok(capacity_from_nsr(total, config.symbol_rate_gbaud))
}

/// `2 Rs log2(1 + 1/nsr)` in Gbps for a symbol rate in GBd.
pub fn capacity_from_nsr(total_nsr: f64, symbol_rate_gbaud: f64) -> f64 {
    2.0 * symbol_rate_gbaud * (1.0 / total_nsr).ln_1p() / std::f64::consts::LN_2
}

/// How many `request_gbps` services fit in `capacity_gbps`.
pub fn max_services(capacity_gbps: f64, request_gbps: f64) -> u32 {
    assert!(request_gbps > 0.0, "request size must be positive");
    // guard against 199.99999999 style round-off on exact multiples
    let ratio = capacity_gbps / request_gbps;
    (ratio + 1e-9).floor().max(0.0) as u32
}
