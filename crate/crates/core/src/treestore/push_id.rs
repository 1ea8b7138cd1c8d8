use std::fmt;

use rand::Rng;

/// Ordered key alphabet; ASCII order of these characters is their value order.
pub const PUSH_ALPHABET: &[u8; 64] =
    b"-0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ_abcdefghijklmnopqrstuvwxyz";

const TIME_CHARS: usize = 8;
const RANDOM_CHARS: usize = 12;
pub const PUSH_ID_LEN: usize = TIME_CHARS + RANDOM_CHARS;

/// Largest timestamp the 8 time characters can carry (64^8 - 1 ms).
pub const MAX_PUSH_TIMESTAMP: u64 = (1 << 48) - 1;

/// A 20-character chronologically sortable key.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PushId(String);

impl PushId {
    pub fn parse(text: &str) -> Option<Self> {
        if text.len() == PUSH_ID_LEN && text.bytes().all(|b| symbol_value(b).is_some()) {
            Some(Self(text.to_string()))
        } else {
            None
        }
    }

    /// Milliseconds since the Unix epoch encoded in the first 8 characters.
    pub fn timestamp_ms(&self) -> u64 {
        self.0.as_bytes()[..TIME_CHARS]
            .iter()
            .fold(0u64, |acc, &b| acc * 64 + symbol_value(b).unwrap_or(0) as u64)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for PushId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for PushId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn symbol_value(b: u8) -> Option<u8> {
    PUSH_ALPHABET.iter().position(|&c| c == b).map(|p| p as u8)
}

/// Stateful generator. Not thread-safe on its own; the store calls it under
/// its write lock so key order follows commit order.
#[derive(Debug, Default)]
pub struct PushIdGenerator {
    last_ms: Option<u64>,
    last_random: [u8; RANDOM_CHARS],
}

impl PushIdGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// A clock that steps backwards is held at the last time seen, so keys
    /// from one generator always ascend.
    pub fn next(&mut self, now_ms: u64) -> PushId {
        let now_ms = now_ms.min(MAX_PUSH_TIMESTAMP).max(self.last_ms.unwrap_or(0));
        if self.last_ms == Some(now_ms) {
            self.increment();
        } else {
            let mut rng = rand::thread_rng();
            for slot in self.last_random.iter_mut() {
                *slot = rng.gen_range(0..64);
            }
            // The leading random symbol starts in the lower half so that
            // same-millisecond increments never carry out of the suffix.
            self.last_random[0] &= 0x1f;
            self.last_ms = Some(now_ms);
        }

        let mut key = [0u8; PUSH_ID_LEN];
        let mut t = now_ms;
        for i in (0..TIME_CHARS).rev() {
            key[i] = PUSH_ALPHABET[(t % 64) as usize];
            t /= 64;
        }
        for (i, &r) in self.last_random.iter().enumerate() {
            key[TIME_CHARS + i] = PUSH_ALPHABET[r as usize];
        }
        PushId(String::from_utf8(key.to_vec()).expect("alphabet is ASCII"))
    }

    fn increment(&mut self) {
        for slot in self.last_random.iter_mut().rev() {
            if *slot == 63 {
                *slot = 0;
            } else {
                *slot += 1;
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backwards_clock_still_ascends() {
        let mut g = PushIdGenerator::new();
        let a = g.next(5_000);
        let b = g.next(4_000);
        assert!(a.as_str() < b.as_str());
        assert_eq!(b.timestamp_ms(), 5_000);
    }

    #[test]
    fn alphabet_is_ascii_sorted() {
        assert!(PUSH_ALPHABET.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn later_millisecond_sorts_later() {
        let mut g = PushIdGenerator::new();
        let a = g.next(0);
        let b = g.next(1);
        assert!(a < b);
        assert_eq!(a.as_str().len(), 20);
    }

    #[test]
    fn same_millisecond_keeps_call_order() {
        let mut g = PushIdGenerator::new();
        let ids: Vec<_> = (0..1000).map(|_| g.next(42)).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(ids.iter().all(|id| id.timestamp_ms() == 42));
    }

    #[test]
    fn parse_rejects_wrong_shapes() {
        assert!(PushId::parse("short").is_none());
        assert!(PushId::parse("-KoyxtV-............").is_none());
        assert!(PushId::parse("-KoyxtV-abcdefghijkl").is_some());
    }
}
