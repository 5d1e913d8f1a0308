//! Shared run configuration and literal parsing for the command line.

use std::path::PathBuf;
use std::sync::Arc;

use todalax::grid::Grid;
use todalax::{c64, C64};

/// Which artifact encodings a command writes next to its report.
#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DumpFormat {
    Json,
    Csv,
    Both,
}

impl DumpFormat {
    pub fn wants_json(self) -> bool {
        matches!(self, DumpFormat::Json | DumpFormat::Both)
    }

    pub fn wants_csv(self) -> bool {
        matches!(self, DumpFormat::Csv | DumpFormat::Both)
    }
}

/// Options every subcommand shares.  Grid bounds are a centred square;
/// `tol` overrides the static tolerance of every reported residual while
/// resolution-dependent budgets stay in force.
#[derive(Clone, Debug)]
pub struct RunCfg {
    pub half_width: f64,
    pub resolution: usize,
    pub margin: f64,
    pub seed: u64,
    pub tol: Option<f64>,
    pub out_dir: PathBuf,
    pub format: DumpFormat,
}

impl RunCfg {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err("half-width must be positive and finite".into());
        }
        if self.resolution < 8 {
            return Err("resolution must be at least 8".into());
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err("margin must be nonnegative and finite".into());
        }
        if let Some(t) = self.tol {
            if !(t.is_finite() && t > 0.0) {
                return Err("tolerance override must be positive and finite".into());
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> todalax::Result<Arc<Grid>> {
        Grid::square(self.half_width, self.resolution)
    }

    /// Static default tolerance unless a global override was given.
    pub fn tol_or(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }
}

/// Output directory precedence: explicit flag, then the TODALAX_OUT
/// environment variable, then ./out.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("TODALAX_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Parse one complex literal: `3`, `-0.25`, `i`, `-i`, `2i`, `1+2i`,
/// `1.5e-3-2e-4i`.  The imaginary summand, when present, comes second and
/// ends with `i`.
pub fn parse_complex(s: &str) -> Result<C64, String> {
    let t = s.trim();
    if t.is_empty() {
        return Err("empty complex literal".into());
    }
    let bytes = t.as_bytes();
    let mut split = None;
    for i in 1..bytes.len() {
        let c = bytes[i];
        if c == b'+' || c == b'-' {
            let prev = bytes[i - 1];
            if prev != b'e' && prev != b'E' {
                split = Some(i);
            }
        }
    }
    let finite = |v: f64| -> Result<f64, String> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite literal `{t}`"))
        }
    };
    let imag_coeff = |p: &str| -> Result<f64, String> {
        let core = &p[..p.len() - 1];
        match core {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => core
                .parse::<f64>()
                .map_err(|_| format!("bad imaginary part `{p}` in `{t}`")),
        }
    };
    if t.ends_with('i') || t.ends_with('I') {
        match split {
            Some(i) => {
                let re: f64 = t[..i]
                    .parse()
                    .map_err(|_| format!("bad real part `{}` in `{t}`", &t[..i]))?;
                let im = imag_coeff(&t[i..])?;
                Ok(c64(finite(re)?, finite(im)?))
            }
            None => Ok(c64(0.0, finite(imag_coeff(t)?)?)),
        }
    } else {
        let re: f64 = t.parse().map_err(|_| format!("bad number `{t}`"))?;
        Ok(c64(finite(re)?, 0.0))
    }
}

/// Comma-separated coefficients in ascending powers of z.
pub fn parse_coeffs(s: &str) -> Result<Vec<C64>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.iter().all(|p| p.trim().is_empty()) {
        return Err("empty coefficient list".into());
    }
    parts.into_iter().map(parse_complex).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_literal_forms() {
        assert_eq!(parse_complex("3").unwrap(), c64(3.0, 0.0));
        assert_eq!(parse_complex("-0.25").unwrap(), c64(-0.25, 0.0));
        assert_eq!(parse_complex("i").unwrap(), c64(0.0, 1.0));
        assert_eq!(parse_complex("-i").unwrap(), c64(0.0, -1.0));
        assert_eq!(parse_complex("2i").unwrap(), c64(0.0, 2.0));
        assert_eq!(parse_complex("1+2i").unwrap(), c64(1.0, 2.0));
        assert_eq!(parse_complex("1-i").unwrap(), c64(1.0, -1.0));
        assert_eq!(parse_complex("-1-2i").unwrap(), c64(-1.0, -2.0));
        assert_eq!(parse_complex("1.5e-3-2e-4i").unwrap(), c64(1.5e-3, -2e-4));
    }

    #[test]
    fn malformed_literals_are_rejected() {
        assert!(parse_complex("").is_err());
        assert!(parse_complex("1+2").is_err());
        assert!(parse_complex("2i+1").is_err());
        assert!(parse_complex("nan").is_err());
        assert!(parse_complex("inf").is_err());
    }

    #[test]
    fn coefficient_lists_parse_in_order() {
        let c = parse_coeffs("0,1,-0.5i").unwrap();
        assert_eq!(c, vec![c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, -0.5)]);
        assert!(parse_coeffs("").is_err());
        assert!(parse_coeffs(",,").is_err());
    }
}
