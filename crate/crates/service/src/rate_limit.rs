//! Token buckets keyed by coarse client address.

use std::collections::HashMap;
use std::net::IpAddr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateDecision {
    Allow { remaining: u32 },
    Deny { retry_after: Duration },
}

#[derive(Debug, Clone, Copy)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

/// `capacity` tokens per key, refilled continuously so an empty bucket is
/// full again after `period`. State lives in memory only.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: u32,
    period: Duration,
    buckets: Mutex<HashMap<String, Bucket>>,
}

impl RateLimiter {
    pub fn new(capacity: u32, period: Duration) -> Self {
        assert!(
            capacity > 0 && !period.is_zero(),
            "rate limiter needs a positive capacity and period"
        );
        RateLimiter {
            capacity,
            period,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    fn per_second(&self) -> f64 {
        f64::from(self.capacity) / self.period.as_secs_f64()
    }

    fn refill(&self, bucket: &mut Bucket, now: Instant) {
        let elapsed = now.saturating_duration_since(bucket.last).as_secs_f64();
        bucket.tokens = (bucket.tokens + elapsed * self.per_second()).min(f64::from(self.capacity));
        bucket.last = now.max(bucket.last);
    }

    pub fn check(&self, key: &str, now: Instant) -> RateDecision {
        let mut buckets = self.buckets.lock().unwrap_or_else(|e| e.into_inner());
        let bucket = buckets.entry(key.to_owned()).or_insert(Bucket {
            tokens: f64::from(self.capacity),
            last: now,
        });
        self.refill(bucket, now);
        if bucket.tokens >= 1.0 {
            bucket.tokens -= 1.0;
            RateDecision::Allow {
                remaining: bucket.tokens.floor() as u32,
            }
        } else {
            // Rounded up to whole milliseconds so waiting exactly this long
            // always suffices.
            let wait_ms = ((1.0 - bucket.tokens) / self.per_second() * 1000.0).ceil();
            RateDecision::Deny {
                retry_after: Duration::from_millis(wait_ms as u64),
            }
        }
    }

    /// Drops buckets that have refilled completely; they behave exactly like
    /// absent ones.
    pub fn prune(&self, now: Instant) {
        let mut buckets = self.buckets.lock().unwrap_or_else(|e| e.into_inner());
        buckets.retain(|_, b| {
            let mut b = *b;
            self.refill(&mut b, now);
            b.tokens < f64::from(self.capacity)
        });
    }

    pub fn tracked_keys(&self) -> usize {
        self.buckets.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

/// Rate-limit key for an address: its /16 for IPv4, its /48 for IPv6.
/// IPv4-mapped IPv6 addresses are treated as IPv4.
pub fn client_key(addr: IpAddr) -> String {
    match addr {
        IpAddr::V6(v6) => match v6.to_ipv4_mapped() {
            Some(v4) => client_key(IpAddr::V4(v4)),
            None => {
                let s = v6.segments();
                format!("{:x}:{:x}:{:x}::/48", s[0], s[1], s[2])
            }
        },
        IpAddr::V4(v4) => {
            let o = v4.octets();
            format!("{}.{}.0.0/16", o[0], o[1])
        }
    }
}
