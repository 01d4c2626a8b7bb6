//! Flag value parsers. Integers accept `2^N`; lists are separated by `,` or
//! `;` and may contain power ranges such as `2^6..2^12`.

#[derive(Clone, Debug, PartialEq)]
pub struct U64List(pub Vec<u64>);

#[derive(Clone, Debug, PartialEq)]
pub struct F64List(pub Vec<f64>);

fn power_exponent(s: &str) -> Option<Result<i32, String>> {
    let e = s.trim().strip_prefix("2^")?;
    Some(e.parse().map_err(|_| format!("bad exponent in {s:?}")))
}

pub fn seed(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16),
        None => s.replace('_', "").parse(),
    };
    parsed.map_err(|_| format!("seed must be a decimal or 0x-hex 64-bit integer, got {s:?}"))
}

pub fn budget(s: &str) -> Result<u128, String> {
    match power_exponent(s) {
        Some(e) => {
            let e = e?;
            u32::try_from(e)
                .ok()
                .and_then(|e| 1u128.checked_shl(e).filter(|_| e < 128))
                .ok_or_else(|| format!("budget 2^{e} out of range"))
        }
        None => s
            .trim()
            .parse()
            .map_err(|_| format!("budget must be an integer or 2^N, got {s:?}")),
    }
}

pub fn count(s: &str) -> Result<u64, String> {
    let v = budget(s)?;
    u64::try_from(v).map_err(|_| format!("{s:?} does not fit in 64 bits"))
}

fn items(s: &str) -> impl Iterator<Item = &str> {
    s.split([',', ';']).map(str::trim).filter(|t| !t.is_empty())
}

fn power_range(item: &str) -> Option<Result<(i32, i32), String>> {
    let (lo, hi) = item.split_once("..")?;
    Some((|| {
        let lo = power_exponent(lo)
            .ok_or_else(|| format!("range bounds must be powers of two: {item:?}"))??;
        let hi = power_exponent(hi)
            .ok_or_else(|| format!("range bounds must be powers of two: {item:?}"))??;
        if lo > hi {
            return Err(format!("empty range {item:?}"));
        }
        Ok((lo, hi))
    })())
}

pub fn u64_list(s: &str) -> Result<U64List, String> {
    let mut out = Vec::new();
    for item in items(s) {
        match power_range(item) {
            Some(r) => {
                let (lo, hi) = r?;
                if lo < 0 || hi > 63 {
                    return Err(format!(
                        "integer range {item:?} must use exponents in [0, 63]"
                    ));
                }
                out.extend((lo..=hi).map(|e| 1u64 << e));
            }
            None => out.push(count(item)?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    out.sort_unstable();
    out.dedup();
    Ok(U64List(out))
}

pub fn f64_list(s: &str) -> Result<F64List, String> {
    let mut out = Vec::new();
    for item in items(s) {
        if let Some(r) = power_range(item) {
            let (lo, hi) = r?;
            out.extend((lo..=hi).map(|e| 2f64.powi(e)));
        } else if let Some(e) = power_exponent(item) {
            out.push(2f64.powi(e?));
        } else {
            let v: f64 = item
                .parse()
                .map_err(|_| format!("not a number: {item:?}"))?;
            if !v.is_finite() {
                return Err(format!("not finite: {item:?}"));
            }
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(F64List(out))
}
