//! Small numeric helpers shared across modules.

/// Standard logistic function with the argument clamped to avoid overflow.
#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-40.0, 40.0)).exp())
}

/// `ln(1 + exp(x))` computed without overflow.
#[inline]
pub(crate) fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// SplitMix64 step, used to derive independent RNG streams from a base seed.
#[inline]
pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a per-stream seed from a base seed and a stream tag/index.
///
/// Streams are stable regardless of the order they are drawn from, which keeps
/// per-worker simulation deterministic under parallel scheduling.
pub(crate) fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut s = base ^ tag.rotate_left(17);
    let a = splitmix64(&mut s);
    let mut s2 = a ^ index;
    splitmix64(&mut s2)
}

/// Sample mean; `None` for an empty slice.
pub(crate) fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard deviation with the `n - 1` denominator.
pub(crate) fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() as f64 - 1.0)).sqrt())
}

/// Format a float with 9 significant digits for CSV output.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let formatted = format!("{:.8e}", x);
    // Prefer plain decimal notation for ordinary magnitudes.
    let exp: i32 = formatted
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            let t = s.trim_end_matches('0').trim_end_matches('.');
            return t.to_string();
        }
        return s;
    }
    formatted
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_midpoint_and_tails() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(50.0) > 0.999_999);
        assert!(logistic(-50.0) < 1e-6);
    }

    #[test]
    fn derive_seed_is_order_free() {
        let a = derive_seed(42, 1, 7);
        let b = derive_seed(42, 1, 8);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 1, 7));
    }

    #[test]
    fn fmt_sig9_examples() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(0.125), "0.125");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(123456789.0), "123456789");
    }

    #[test]
    fn sd_matches_hand_value() {
        let sd = sample_sd(&[10.0, 20.0, 30.0]).unwrap();
        assert!((sd - 10.0).abs() < 1e-12);
    }
}
