//! Process-wide wall clock with monotonic progression.
//!
//! Timestamps are microseconds since the UNIX epoch, anchored once at first
//! use and advanced with [`Instant`], so two readings in one process never
//! go backwards even if the system clock is adjusted.

use std::sync::OnceLock;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

struct Anchor {
    instant: Instant,
    epoch_micros: u64,
}

fn anchor() -> &'static Anchor {
    static ANCHOR: OnceLock<Anchor> = OnceLock::new();
    ANCHOR.get_or_init(|| Anchor {
        instant: Instant::now(),
        epoch_micros: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or(0),
    })
}

/// Current time in epoch microseconds.
pub fn now_micros() -> u64 {
    let a = anchor();
    a.epoch_micros + a.instant.elapsed().as_micros() as u64
}

/// Converts an epoch-microsecond reading back into an [`Instant`].
pub fn instant_at(micros: u64) -> Instant {
    let a = anchor();
    if micros >= a.epoch_micros {
        a.instant + Duration::from_micros(micros - a.epoch_micros)
    } else {
        a.instant
            .checked_sub(Duration::from_micros(a.epoch_micros - micros))
            .unwrap_or(a.instant)
    }
}

/// Sleeps until the given instant; returns immediately if it already passed.
pub fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}
