//! WAN link emulation: one-way delay with uniform jitter plus bandwidth
//! shaping, applied to client transports that cross a tier boundary.
//!
//! A link is a single FIFO serializer shared by every connection that
//! crosses it. A transfer of `b` bytes occupies the link for
//! `b·8 / (bandwidth_mbit·10⁶)` seconds starting when the link frees up,
//! and is delivered one sampled propagation delay after its last byte left.
//! Writers release bytes in quanta of at most [`DEFAULT_BURST_BYTES`], so
//! over any window the delivered volume exceeds the configured rate by at
//! most one quantum.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock;
use crate::pilot::Tier;

pub const DEFAULT_BURST_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub delay_ms: f64,
    /// Half-width of the uniform jitter around `delay_ms`.
    pub jitter_ms: f64,
    /// Link rate; `f64::INFINITY` disables shaping.
    pub bandwidth_mbit: f64,
    /// `(source tier, destination tier)`.
    pub applies_to: (Tier, Tier),
}

impl LinkSpec {
    pub fn new(delay_ms: f64, jitter_ms: f64, bandwidth_mbit: f64) -> Self {
        Self {
            delay_ms,
            jitter_ms,
            bandwidth_mbit,
            applies_to: (Tier::Edge, Tier::Cloud),
        }
    }

    pub fn identity(from: Tier, to: Tier) -> Self {
        Self {
            delay_ms: 0.0,
            jitter_ms: 0.0,
            bandwidth_mbit: f64::INFINITY,
            applies_to: (from, to),
        }
    }

    pub fn between(mut self, from: Tier, to: Tier) -> Self {
        self.applies_to = (from, to);
        self
    }

    pub fn is_identity(&self) -> bool {
        self.delay_ms == 0.0 && self.jitter_ms == 0.0 && self.bandwidth_mbit.is_infinite()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.delay_ms >= 0.0 && self.delay_ms.is_finite()) {
            return Err(format!("delay must be finite and >= 0, got {}", self.delay_ms));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(format!("jitter must be finite and >= 0, got {}", self.jitter_ms));
        }
        if self.jitter_ms > self.delay_ms {
            return Err("jitter larger than delay would allow negative latency".into());
        }
        if self.bandwidth_mbit.is_nan() || self.bandwidth_mbit <= 0.0 {
            return Err(format!("bandwidth must be > 0, got {}", self.bandwidth_mbit));
        }
        Ok(())
    }

    /// Time the link needs to put `bytes` on the wire.
    pub fn serialization_time(&self, bytes: u64) -> Duration {
        if self.bandwidth_mbit.is_infinite() || bytes == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(bytes as f64 * 8.0 / (self.bandwidth_mbit * 1e6))
        }
    }
}

struct LinkState {
    /// When the serializer finishes the last reserved byte.
    next_free: Instant,
    rng: ChaCha8Rng,
}

/// A shaped link shared by all connections between one tier pair.
pub struct Link {
    spec: LinkSpec,
    burst_bytes: usize,
    state: Mutex<LinkState>,
}

impl std::fmt::Debug for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Link").field("spec", &self.spec).finish()
    }
}

impl Link {
    pub fn new(spec: LinkSpec) -> Self {
        Self::with_seed(spec, 0x5eed)
    }

    pub fn with_seed(spec: LinkSpec, seed: u64) -> Self {
        Self {
            spec,
            burst_bytes: DEFAULT_BURST_BYTES,
            state: Mutex::new(LinkState {
                next_free: Instant::now(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
        }
    }

    pub fn with_burst(mut self, burst_bytes: usize) -> Self {
        self.burst_bytes = burst_bytes.max(1);
        self
    }

    pub fn spec(&self) -> &LinkSpec {
        &self.spec
    }

    fn sample_delay(&self, rng: &mut ChaCha8Rng) -> Duration {
        let ms = if self.spec.jitter_ms > 0.0 {
            rng.random_range(
                self.spec.delay_ms - self.spec.jitter_ms..=self.spec.delay_ms + self.spec.jitter_ms,
            )
        } else {
            self.spec.delay_ms
        };
        Duration::from_secs_f64(ms.max(0.0) / 1e3)
    }

    /// Reserves the link for one transfer submitted at `now` and returns
    /// its delivery time.
    pub fn shape_transfer(&self, payload_bytes: u64, now: Instant) -> Instant {
        let mut st = self.state.lock();
        let start = st.next_free.max(now);
        let done = start + self.spec.serialization_time(payload_bytes);
        st.next_free = done;
        let delay = self.sample_delay(&mut st.rng);
        done + delay
    }

    /// Reserves one transfer split into burst-sized quanta, returning the
    /// delivery time of each quantum. All quanta share one delay sample.
    pub fn schedule(&self, payload_bytes: usize, now: Instant) -> Vec<(Instant, usize)> {
        let mut st = self.state.lock();
        let delay = self.sample_delay(&mut st.rng);
        let mut t = st.next_free.max(now);
        let mut out = Vec::with_capacity(payload_bytes / self.burst_bytes + 1);
        let mut left = payload_bytes;
        while left > 0 {
            let n = left.min(self.burst_bytes);
            t += self.spec.serialization_time(n as u64);
            out.push((t + delay, n));
            left -= n;
        }
        st.next_free = t;
        out
    }
}

/// Writer that paces everything written through it over a [`Link`]. Each
/// `write` call is treated as one transfer and is fully written before the
/// call returns, so bytes are never dropped or reordered.
pub struct ShapedWriter<W> {
    inner: W,
    link: Arc<Link>,
}

impl<W: Write> ShapedWriter<W> {
    pub fn new(inner: W, link: Arc<Link>) -> Self {
        Self { inner, link }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> Write for ShapedWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let mut pos = 0;
        for (at, n) in self.link.schedule(buf.len(), Instant::now()) {
            clock::sleep_until(at);
            self.inner.write_all(&buf[pos..pos + n])?;
            pos += n;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Installed links keyed by `(source, destination)` tier. Missing entries
/// mean an unshaped (identity) link.
type LinkMap = HashMap<(Tier, Tier), Arc<Link>>;

#[derive(Clone, Default)]
pub struct LinkTable {
    links: Arc<RwLock<LinkMap>>,
}

impl std::fmt::Debug for LinkTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.links.read().iter()).finish()
    }
}

impl LinkTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs `spec` on its tier pair, replacing any earlier link.
    /// Installing an identity spec removes shaping for that pair.
    pub fn install_link(&self, spec: LinkSpec) -> Result<(), String> {
        spec.validate()?;
        let mut links = self.links.write();
        if spec.is_identity() {
            links.remove(&spec.applies_to);
        } else {
            links.insert(spec.applies_to, Arc::new(Link::new(spec)));
        }
        Ok(())
    }

    pub fn remove_link(&self, from: Tier, to: Tier) {
        self.links.write().remove(&(from, to));
    }

    pub fn link(&self, from: Tier, to: Tier) -> Option<Arc<Link>> {
        self.links.read().get(&(from, to)).cloned()
    }
}
