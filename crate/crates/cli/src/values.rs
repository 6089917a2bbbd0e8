//! Parsing of the compact list and range syntax used on the command line.

/// Parses `a..b` (inclusive), `a` or `a,b,c` into integers.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: usize = b.trim().parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad integer {x:?}")))
        .collect()
}

fn parse_power(s: &str) -> Result<(f64, i32), String> {
    let (base, exp) = s.split_once('^').ok_or_else(|| format!("expected base^exponent, got {s:?}"))?;
    let base: f64 = base.trim().parse().map_err(|_| format!("bad base in {s:?}"))?;
    let exp: i32 = exp.trim().parse().map_err(|_| format!("bad exponent in {s:?}"))?;
    Ok((base, exp))
}

fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if s.contains('^') {
        let (b, e) = parse_power(s)?;
        Ok(b.powi(e))
    } else {
        s.parse().map_err(|_| format!("bad number {s:?}"))
    }
}

/// Parses a list of reals: `x,y,z` where each item is a number or
/// `base^exp`, or a power range `2^-10..2^-4` stepping the exponent by one.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (base_a, lo) = parse_power(a)?;
        let (base_b, hi) = parse_power(b)?;
        if base_a != base_b {
            return Err(format!("range {s:?} mixes bases"));
        }
        if lo > hi {
            return Err(format!("empty range {s:?}"));
        }
        return Ok((lo..=hi).map(|e| base_a.powi(e)).collect());
    }
    s.split(',').map(parse_number).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_lists() {
        assert_eq!(parse_usize_list("4..6").unwrap(), vec![4, 5, 6]);
        assert_eq!(parse_usize_list("5").unwrap(), vec![5]);
        assert_eq!(parse_usize_list("20, 40,80").unwrap(), vec![20, 40, 80]);
        assert!(parse_usize_list("6..4").is_err());
        assert!(parse_usize_list("x").is_err());
    }

    #[test]
    fn real_lists() {
        let v = parse_f64_list("2^-10..2^-4").unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v[0], 1.0 / 1024.0);
        assert_eq!(v[6], 1.0 / 16.0);
        assert_eq!(parse_f64_list("0.5,2^-1,1e-3").unwrap(), vec![0.5, 0.5, 1e-3]);
        assert!(parse_f64_list("2^-4..3^-2").is_err());
    }
}
