//! Bit-exact text/JSON formats for point configurations (hexadecimal floats).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointproc::PointConfiguration;

/// Formats a double as a C99-style hexadecimal literal, e.g. `0x1.8p+1` for 3.
pub fn format_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    let esign = if e >= 0 { "+" } else { "-" };
    format!("{sign}0x{lead}{frac}p{esign}{}", e.abs())
}

/// Parses a hexadecimal literal produced by [`format_hex`] (also accepts
/// ordinary decimal literals).
pub fn parse_hex(s: &str) -> Option<f64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) else {
        return s.parse().ok();
    };
    let (mant, exp) = hex.split_once(['p', 'P'])?;
    let exp: i64 = exp.parse().ok()?;
    let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
    if int_part.len() != 1 || frac_part.len() > 13 {
        return None;
    }
    let lead = u64::from_str_radix(int_part, 16).ok()?;
    let frac = if frac_part.is_empty() {
        0
    } else {
        u64::from_str_radix(frac_part, 16).ok()? << (4 * (13 - frac_part.len()))
    };
    let bits = match (lead, exp) {
        (0, _) if frac == 0 => 0,
        (0, -1022) => frac,
        (1, e) if (-1022..=1023).contains(&e) => (((e + 1023) as u64) << 52) | frac,
        _ => return None,
    };
    let v = f64::from_bits(bits);
    Some(if neg { -v } else { v })
}

/// Text format: `# window <lo> <hi>` header, then one hexadecimal point per line.
pub fn to_text(c: &PointConfiguration) -> String {
    let (lo, hi) = c.window();
    let mut s = format!("# window {} {}\n", format_hex(lo), format_hex(hi));
    for &p in c.points() {
        s.push_str(&format_hex(p));
        s.push('\n');
    }
    s
}

pub fn from_text(text: &str) -> Result<PointConfiguration> {
    let mut window = None;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if it.next() == Some("window") {
                let lo = it.next().and_then(parse_hex);
                let hi = it.next().and_then(parse_hex);
                match (lo, hi) {
                    (Some(lo), Some(hi)) => window = Some((lo, hi)),
                    _ => return Err(Error::Parse { line: i + 1, msg: "bad window header".into() }),
                }
            }
            continue;
        }
        let v = parse_hex(line).ok_or_else(|| Error::Parse { line: i + 1, msg: format!("bad float {line:?}") })?;
        pts.push(v);
    }
    let window = match window {
        Some(w) => w,
        None => {
            let lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if pts.is_empty() {
                (0.0, 0.0)
            } else {
                (lo, hi)
            }
        }
    };
    PointConfiguration::new(pts, window)
}

#[derive(Serialize, Deserialize)]
struct JsonConfig {
    window: [String; 2],
    points: Vec<String>,
}

/// JSON: `{"window": [lo, hi], "points": [...]}` with hexadecimal string entries.
pub fn to_json(c: &PointConfiguration) -> String {
    let (lo, hi) = c.window();
    let j = JsonConfig {
        window: [format_hex(lo), format_hex(hi)],
        points: c.points().iter().map(|&p| format_hex(p)).collect(),
    };
    serde_json::to_string(&j).expect("serializable")
}

pub fn from_json(s: &str) -> Result<PointConfiguration> {
    let j: JsonConfig = serde_json::from_str(s)?;
    let bad = |v: &str| Error::Parse { line: 0, msg: format!("bad float {v:?}") };
    let lo = parse_hex(&j.window[0]).ok_or_else(|| bad(&j.window[0]))?;
    let hi = parse_hex(&j.window[1]).ok_or_else(|| bad(&j.window[1]))?;
    let pts = j
        .points
        .iter()
        .map(|p| parse_hex(p).ok_or_else(|| bad(p)))
        .collect::<Result<Vec<_>>>()?;
    PointConfiguration::new(pts, (lo, hi))
}
