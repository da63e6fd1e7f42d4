//! Human-readable durations, converted to nanoseconds.

const UNITS: [(&str, u64); 5] = [
    ("ns", 1),
    ("us", 1_000),
    ("ms", 1_000_000),
    ("s", 1_000_000_000),
    ("m", 60_000_000_000),
];

/// `1s`, `10ms`, `1.5s`, `250us`; a bare integer is nanoseconds.
pub fn parse_duration(text: &str) -> Result<u64, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    if num.is_empty() {
        return Err(format!("`{text}` is not a duration (try 1s, 10ms, 100s)"));
    }
    let scale = if unit.is_empty() {
        1
    } else {
        UNITS
            .iter()
            .find(|(u, _)| *u == unit)
            .map(|(_, s)| *s)
            .ok_or_else(|| format!("unknown unit `{unit}` in `{text}` (ns, us, ms, s, m)"))?
    };
    match num.split_once('.') {
        None => num
            .parse::<u64>()
            .ok()
            .and_then(|n| n.checked_mul(scale))
            .ok_or_else(|| format!("`{text}` is out of range")),
        Some((whole, frac)) => {
            if frac.is_empty() || frac.contains('.') {
                return Err(format!("`{text}` is not a duration"));
            }
            let whole: u64 = if whole.is_empty() {
                0
            } else {
                whole.parse().map_err(|_| format!("`{text}` is out of range"))?
            };
            let digits = frac.len() as u32;
            let frac_val: u64 = frac.parse().map_err(|_| format!("`{text}` is out of range"))?;
            let denom = 10u64
                .checked_pow(digits)
                .ok_or_else(|| format!("`{text}` has too many digits"))?;
            if (u128::from(frac_val) * u128::from(scale)) % u128::from(denom) != 0 {
                return Err(format!("`{text}` is not a whole number of nanoseconds"));
            }
            whole
                .checked_mul(scale)
                .and_then(|w| w.checked_add(frac_val * scale / denom))
                .ok_or_else(|| format!("`{text}` is out of range"))
        }
    }
}

/// `30s:40s` as a half-open range.
pub fn parse_range(text: &str) -> Result<(u64, u64), String> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| format!("`{text}` is not a range (expected start:end, e.g. 30s:40s)"))?;
    let (t1, t2) = (parse_duration(a)?, parse_duration(b)?);
    if t1 >= t2 {
        return Err(format!("range `{text}` is empty"));
    }
    Ok((t1, t2))
}
