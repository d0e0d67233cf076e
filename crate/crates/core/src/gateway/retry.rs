use std::time::Duration;

/// Exponential backoff with server hints.
///
/// Delays never decrease: each delay is the largest of the previous delay,
/// the exponential schedule, and the (capped) `Retry-After` hint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub max_hint: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_delay: Duration::from_secs(1),
            max_hint: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based), given the previous delay
    /// and an optional server hint.
    pub fn delay(&self, retry: u32, previous: Duration, hint: Option<Duration>) -> Duration {
        let exp = self
            .initial_delay
            .saturating_mul(1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX));
        let hint = hint.map_or(Duration::ZERO, |h| h.min(self.max_hint));
        exp.max(previous).max(hint)
    }

    /// Full delay schedule for a sequence of failed attempts with their
    /// hints. At most `max_attempts - 1` delays are produced.
    pub fn schedule(&self, hints: &[Option<Duration>]) -> Vec<Duration> {
        let mut prev = Duration::ZERO;
        hints
            .iter()
            .take(self.max_attempts.saturating_sub(1) as usize)
            .enumerate()
            .map(|(i, hint)| {
                prev = self.delay(i as u32 + 1, prev, *hint);
                prev
            })
            .collect()
    }
}

/// Parse a `Retry-After` value given in (possibly fractional) seconds.
pub fn parse_retry_after(value: &str) -> Option<Duration> {
    let secs: f64 = value.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schedule_doubles_from_one_second() {
        let p = RetryPolicy::default();
        let s = p.schedule(&[None; 10]);
        let secs: Vec<u64> = s.iter().map(Duration::as_secs).collect();
        assert_eq!(secs, vec![1, 2, 4, 8]);
    }

    #[test]
    fn hints_raise_but_never_lower() {
        let p = RetryPolicy::default();
        let s = p.schedule(&[Some(Duration::from_secs(5)), None, Some(Duration::from_secs(600))]);
        assert_eq!(s, vec![Duration::from_secs(5), Duration::from_secs(5), Duration::from_secs(60)]);
        assert_eq!(parse_retry_after("2"), Some(Duration::from_secs(2)));
        assert_eq!(parse_retry_after("0.5"), Some(Duration::from_millis(500)));
        assert_eq!(parse_retry_after("soon"), None);
    }

    proptest! {
        #[test]
        fn schedule_is_non_decreasing_and_capped(
            max_attempts in 1u32..12,
            hints in proptest::collection::vec(proptest::option::of(0u64..120_000), 0..20),
        ) {
            let p = RetryPolicy { max_attempts, initial_delay: Duration::from_millis(10), max_hint: Duration::from_secs(30) };
            let hints: Vec<Option<Duration>> = hints.into_iter().map(|h| h.map(Duration::from_millis)).collect();
            let s = p.schedule(&hints);
            prop_assert!(s.len() < max_attempts as usize);
            prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
