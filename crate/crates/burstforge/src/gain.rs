//! Gain arguments: `1`..`4` for the presets or `custom:SIGMA_R:SIGMA_S`.

use burstforge_core::burstgen::GainPreset;

use crate::error::{Error, Result};

/// A parsed gain and its column label.
#[derive(Debug, Clone, PartialEq)]
pub struct GainArg {
    pub label: String,
    pub preset: GainPreset,
}

pub fn parse_gain(s: &str) -> Result<GainArg> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("custom:") {
        let parts: Vec<&str> = rest.split([':', ',']).collect();
        let [r, sh] = parts[..] else {
            return Err(Error::Usage(format!("custom gain `{s}` must be custom:SIGMA_R:SIGMA_S")));
        };
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("custom gain `{s}`: `{v}` is not a number")))
        };
        let preset = GainPreset::new(num(r)?, num(sh)?).map_err(|e| Error::Usage(e.to_string()))?;
        return Ok(GainArg {
            label: format!("custom {}/{}", preset.sigma_r, preset.sigma_s),
            preset,
        });
    }
    match s.parse::<usize>() {
        Ok(i @ 1..=4) => Ok(GainArg {
            label: format!("Gain {i}"),
            preset: GainPreset::gain(i)?,
        }),
        _ => Err(Error::Usage(format!("gain `{s}` must be 1, 2, 3, 4 or custom:SIGMA_R:SIGMA_S"))),
    }
}

/// Comma-separated gain list; custom entries use `:` between the sigmas.
pub fn parse_gains(s: &str) -> Result<Vec<GainArg>> {
    let gains = s.split(',').map(parse_gain).collect::<Result<Vec<_>>>()?;
    if gains.is_empty() {
        return Err(Error::Usage("empty gain list".into()));
    }
    Ok(gains)
}
