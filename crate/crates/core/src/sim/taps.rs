//! Tap files: one `x y z a v f i` record per line, whitespace separated,
//! flags written as 0/1.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TapRecord;
use crate::error::{Error, Result};

pub fn format_taps(records: &[TapRecord]) -> String {
    let mut s = String::new();
    for r in records {
        // `{}` on f64 prints the shortest string that parses back exactly
        s.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            r.x,
            r.y,
            r.z,
            u8::from(r.a),
            u8::from(r.v),
            r.f,
            r.i
        ));
    }
    s
}

pub fn export_taps(records: &[TapRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_taps(records)).map_err(|e| Error::io(path, e))
}

fn flag(tok: &str) -> std::result::Result<bool, String> {
    match tok {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("flag must be 0 or 1, got {tok:?}")),
    }
}

pub fn parse_taps(source: &str, text: &str) -> Result<Vec<TapRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            message,
        };
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", t.len())));
        }
        let num = |k: usize| t[k].parse::<f64>().map_err(|e| err(format!("field {}: {e}", k + 1)));
        let (x, y, z) = (num(0)?, num(1)?, num(2)?);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        let f: u8 = t[5].parse().map_err(|e| err(format!("finger: {e}")))?;
        if !(1..=4).contains(&f) {
            return Err(err(format!("finger {f} out of range 1..=4")));
        }
        out.push(TapRecord {
            x,
            y,
            z,
            a: flag(t[3]).map_err(&err)?,
            v: flag(t[4]).map_err(&err)?,
            f,
            i: t[6].parse().map_err(|e| err(format!("index: {e}")))?,
        });
    }
    Ok(out)
}

pub fn read_taps(path: &Path) -> Result<Vec<TapRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_taps(&path.display().to_string(), &text)
}

/// Gaussian jitter of `sigma` metres on every contact point; misses untouched.
pub fn add_noise(records: &[TapRecord], sigma: f64, seed: u64) -> Result<Vec<TapRecord>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be nonnegative"));
    }
    if sigma == 0.0 {
        return Ok(records.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    Ok(records
        .iter()
        .map(|r| {
            let mut r = *r;
            if r.v {
                r.x += normal.sample(&mut rng);
                r.y += normal.sample(&mut rng);
                r.z += normal.sample(&mut rng);
            }
            r
        })
        .collect())
}
