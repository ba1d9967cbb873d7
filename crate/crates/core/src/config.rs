//! Flat INI-style run configuration: `[section]` headers, `key = value` lines
//! and `#` comments. Keys are unique across sections; section names are only
//! for readability. Absent keys keep their defaults.

use std::collections::HashSet;

use crate::driver::RunConfig;
use crate::error::{Error, Result};

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

struct Key {
    section: &'static str,
    name: &'static str,
    get: Getter,
    set: Setter,
}

fn num(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b) = (num(a)?, num(b)?);
        return Ok(a / b);
    }
    s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
}

fn int(s: &str) -> std::result::Result<usize, String> {
    s.trim().parse::<usize>().map_err(|_| format!("`{}` is not a nonnegative integer", s.trim()))
}

fn boolean(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(format!("`{o}` is not a boolean")),
    }
}

fn auto(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.trim() == "auto" {
        Ok(None)
    } else {
        num(s).map(Some)
    }
}

fn fmt_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| format!("{v:?}"))
}

macro_rules! key {
    ($sec:literal, $name:literal, f64, $($field:ident).+) => {
        Key {
            section: $sec,
            name: $name,
            get: |c| format!("{:?}", c.$($field).+),
            set: |c, s| {
                c.$($field).+ = num(s)?;
                Ok(())
            },
        }
    };
    ($sec:literal, $name:literal, usize, $($field:ident).+) => {
        Key {
            section: $sec,
            name: $name,
            get: |c| c.$($field).+.to_string(),
            set: |c, s| {
                c.$($field).+ = int(s)? as _;
                Ok(())
            },
        }
    };
    ($sec:literal, $name:literal, bool, $($field:ident).+) => {
        Key {
            section: $sec,
            name: $name,
            get: |c| c.$($field).+.to_string(),
            set: |c, s| {
                c.$($field).+ = boolean(s)?;
                Ok(())
            },
        }
    };
    ($sec:literal, $name:literal, auto, $($field:ident).+) => {
        Key {
            section: $sec,
            name: $name,
            get: |c| fmt_auto(c.$($field).+),
            set: |c, s| {
                c.$($field).+ = auto(s)?;
                Ok(())
            },
        }
    };
}

const KEYS: &[Key] = &[
    key!("model", "epsilon", f64, eps),
    key!("model", "t_end", f64, t_end),
    key!("model", "r1", f64, r1),
    key!("model", "r2", f64, r2),
    key!("model", "half_width", f64, half_width),
    key!("model", "resolution", usize, resolution),
    key!("noise", "sigma", f64, noise.sigma),
    key!("noise", "nu", f64, noise.nu),
    key!("noise", "max_l", usize, noise.max_l),
    key!("noise", "gamma", f64, noise.gamma),
    key!("noise", "noise_defects", bool, noise_defects),
    key!("time", "tau0", f64, tau0),
    key!("time", "tau_min", f64, tau_min),
    key!("time", "tau_max", auto, tau_max),
    key!("time", "newton_tol", f64, newton.tol),
    key!("time", "newton_max_iter", usize, newton.max_iter),
    key!("time", "newton_polish", bool, newton.polish),
    key!("adapt", "adaptive", bool, adaptive),
    key!("adapt", "tol", f64, adapt.tol),
    key!("adapt", "dorfler_theta", f64, adapt.dorfler_theta),
    key!("adapt", "coarsen_fraction", f64, adapt.coarsen_fraction),
    key!("adapt", "max_adapt_rounds", usize, adapt.max_adapt_rounds),
    key!("adapt", "h_min", f64, adapt.h_min),
    key!("adapt", "h_max", f64, adapt.h_max),
    key!("eigen", "eig_every", usize, eig_every),
    key!("eigen", "eig_tol", f64, eigen.tol),
    key!("eigen", "eig_max_iter", usize, eigen.max_iter),
    key!("estimator", "clement_constant", f64, estimator.clement_constant),
    key!("estimator", "interp_constant", f64, estimator.interp_constant),
    key!("estimator", "c_infty", f64, estimator.c_infty),
    key!("estimator", "c_h_infty", auto, estimator.c_h_infty),
    key!("estimator", "delta", f64, estimator.delta),
    key!("estimator", "eps_tilde", auto, estimator.eps_tilde),
    key!("estimator", "eps_tilde_floor", f64, estimator.eps_tilde_floor),
    key!("estimator", "dimension_a", f64, estimator.dimension_a),
    key!("estimator", "generic_constant", f64, estimator.generic_constant),
    key!("estimator", "c_p", f64, estimator.c_p),
    key!("estimator", "hoelder_p", f64, estimator.hoelder_p),
    key!("estimator", "hoelder_q", f64, estimator.hoelder_q),
    key!("estimator", "hoelder_a", f64, estimator.hoelder_a),
    key!("estimator", "c0_moment", f64, estimator.c0_moment),
    key!("estimator", "c0_hat_moment", f64, estimator.c0_hat_moment),
    key!("ensemble", "paths", usize, paths),
    key!("ensemble", "seed", usize, seed),
    key!("ensemble", "workers", usize, workers),
    key!("ensemble", "histogram_bins", usize, histogram_bins),
    Key {
        section: "ensemble",
        name: "snapshot_fractions",
        get: |c| c.snapshot_fractions.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(", "),
        set: |c, s| {
            c.snapshot_fractions = s.split(',').filter(|p| !p.trim().is_empty()).map(num).collect::<std::result::Result<_, _>>()?;
            Ok(())
        },
    },
];

/// Names of all accepted keys.
pub fn keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|k| k.name)
}

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Sets one key; `line` is reported on errors.
pub fn apply(cfg: &mut RunConfig, key: &str, value: &str, line: usize) -> Result<()> {
    let k = lookup(key).ok_or_else(|| Error::UnknownKey(key.to_string()))?;
    (k.set)(cfg, value).map_err(|msg| Error::ConfigParse {
        line,
        msg: format!("{key}: {msg}"),
    })
}

/// Applies `key=value` overrides in order. Line numbers in errors are 0.
pub fn apply_overrides<S: AsRef<str>>(cfg: &mut RunConfig, overrides: &[S]) -> Result<()> {
    for o in overrides {
        let o = o.as_ref();
        let (k, v) = o.split_once('=').ok_or_else(|| Error::ConfigParse {
            line: 0,
            msg: format!("override `{o}` is not key=value"),
        })?;
        apply(cfg, k.trim(), v.trim(), 0)?;
    }
    Ok(())
}

/// Parses configuration text onto the defaults without validating.
pub fn parse_unchecked(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if s.starts_with('[') {
            if !s.ends_with(']') || s.len() < 3 {
                return Err(Error::ConfigParse {
                    line,
                    msg: format!("malformed section header `{s}`"),
                });
            }
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            msg: format!("expected `key = value`, found `{s}`"),
        })?;
        let k = k.trim();
        if !seen.insert(k.to_string()) {
            return Err(Error::ConfigParse {
                line,
                msg: format!("duplicate key `{k}`"),
            });
        }
        apply(&mut cfg, k, v.trim(), line)?;
    }
    Ok(cfg)
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg = parse_unchecked(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes every key; `parse_config(&print_config(c)) == c`.
pub fn print_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut section = "";
    for k in KEYS {
        if k.section != section {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{}]\n", k.section));
            section = k.section;
        }
        out.push_str(&format!("{} = {}\n", k.name, (k.get)(cfg)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.eps, 1.0 / 32.0);
        assert_eq!(c.t_end, 0.012);
        assert_eq!(c.adapt.tol, 1e-2);
        assert_eq!(c.newton.tol, 5e-9);
    }

    #[test]
    fn zero_epsilon_rejected() {
        assert!(matches!(parse_config("epsilon = 0"), Err(Error::Constraint(_))));
    }

    #[test]
    fn unknown_key_named() {
        match parse_config("[model]\nepsilom = 0.1\n") {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "epsilom"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        match parse_config("# c\n\nt_end = abc\n") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("tol = 1\ntol = 2"), Err(Error::ConfigParse { line: 2, .. })));
    }

    #[test]
    fn sigma_override_and_fixpoint() {
        let mut c = parse_config("epsilon = 1/16  # desk\nc_h_infty = 1.5\n").unwrap();
        assert_eq!(c.eps, 0.0625);
        apply_overrides(&mut c, &["sigma=5", "snapshot_fractions = 0, 0.5"]).unwrap();
        assert_eq!(c.noise.sigma, 5.0);
        let printed = print_config(&c);
        assert_eq!(parse_config(&printed).unwrap(), c);
        assert_eq!(print_config(&parse_config(&printed).unwrap()), printed);
    }

    #[test]
    fn hoelder_constraint_checked_at_load() {
        assert!(matches!(parse_config("hoelder_a = 8"), Err(Error::Constraint(_))));
    }
}
