//! Deterministic event simulator the distributed protocols run in.
//!
//! Time is logical: sending costs one tick plus optional seeded jitter, and
//! the engine delivers messages in (time, sequence) order, so a run is a pure
//! function of the protocol, the script, and the seed. `Fifo` delivery
//! preserves per-edge send order; `Reorder` draws per-message jitter from a
//! seeded ChaCha stream to exercise order-independence. The engine counts
//! messages and bytes (words × ternary bytes per word) per quiescent phase
//! and enforces a tick bound per phase as a divergence guard.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum SimError {
    #[error(
        "no quiescence after {ticks} ticks (limit {limit}, {pending} messages pending) — \
         the protocol appears to diverge"
    )]
    Divergence {
        ticks: u64,
        limit: u64,
        pending: usize,
    },
    #[error("operation requires quiescence but {pending} messages are in flight")]
    NotQuiescent { pending: usize },
}

/// A protocol instance driven by the engine. Local (scripted) events are
/// applied by the caller directly on the protocol value; the resulting
/// messages are handed to [`Engine::inject`].
pub trait Protocol {
    type Addr: Copy + Ord + std::fmt::Debug;
    type Msg: Clone;

    fn on_message(
        &mut self,
        to: Self::Addr,
        from: Self::Addr,
        msg: Self::Msg,
    ) -> Vec<Outgoing<Self::Addr, Self::Msg>>;

    /// Message size in header-space words, for byte metering.
    fn msg_words(msg: &Self::Msg) -> usize;
}

/// Deterministic JSON state dump for reports and byte-identity checks.
pub trait Snapshot {
    fn snapshot(&self) -> serde_json::Value;
}

#[derive(Debug, Clone)]
pub struct Outgoing<A, M> {
    pub from: A,
    pub to: A,
    pub msg: M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryMode {
    /// Constant one-tick delay: per-edge FIFO.
    Fifo,
    /// One tick plus seeded jitter in `0..=jitter` ticks.
    Reorder { jitter: u64 },
}

impl DeliveryMode {
    pub fn reorder() -> Self {
        DeliveryMode::Reorder { jitter: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct PhaseMetrics {
    pub label: String,
    pub messages: u64,
    pub bytes: u64,
    pub ticks: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct Metrics {
    pub messages: u64,
    pub bytes: u64,
    pub phases: Vec<PhaseMetrics>,
}

struct Queued<A, M> {
    at: u64,
    seq: u64,
    from: A,
    to: A,
    msg: M,
}

impl<A, M> PartialEq for Queued<A, M> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<A, M> Eq for Queued<A, M> {}
impl<A, M> PartialOrd for Queued<A, M> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<A, M> Ord for Queued<A, M> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

pub struct Engine<P: Protocol> {
    pub proto: P,
    queue: BinaryHeap<Reverse<Queued<P::Addr, P::Msg>>>,
    now: u64,
    seq: u64,
    mode: DeliveryMode,
    rng: ChaCha8Rng,
    bytes_per_word: u64,
    metrics: Metrics,
}

impl<P: Protocol> Engine<P> {
    pub fn new(proto: P, mode: DeliveryMode, seed: u64, bytes_per_word: u64) -> Self {
        Engine {
            proto,
            queue: BinaryHeap::new(),
            now: 0,
            seq: 0,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bytes_per_word,
            metrics: Metrics::default(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Schedules protocol output for delivery.
    pub fn inject(&mut self, outs: Vec<Outgoing<P::Addr, P::Msg>>) {
        for out in outs {
            let delay = match self.mode {
                DeliveryMode::Fifo => 1,
                DeliveryMode::Reorder { jitter } => 1 + self.rng.gen_range(0..=jitter),
            };
            self.queue.push(Reverse(Queued {
                at: self.now + delay,
                seq: self.seq,
                from: out.from,
                to: out.to,
                msg: out.msg,
            }));
            self.seq += 1;
        }
    }

    /// Delivers until the queue drains; `max_ticks` bounds the phase as a
    /// divergence guard. Phase metrics are recorded under `label`.
    pub fn run_to_quiescence(
        &mut self,
        label: &str,
        max_ticks: u64,
    ) -> Result<PhaseMetrics, SimError> {
        let start = self.now;
        let mut phase = PhaseMetrics {
            label: label.to_string(),
            ..PhaseMetrics::default()
        };
        while let Some(Reverse(item)) = self.queue.pop() {
            self.now = item.at;
            if self.now - start > max_ticks {
                return Err(SimError::Divergence {
                    ticks: self.now - start,
                    limit: max_ticks,
                    pending: self.queue.len() + 1,
                });
            }
            phase.messages += 1;
            phase.bytes += P::msg_words(&item.msg) as u64 * self.bytes_per_word;
            let outs = self.proto.on_message(item.to, item.from, item.msg);
            self.inject(outs);
        }
        phase.ticks = self.now - start;
        self.metrics.messages += phase.messages;
        self.metrics.bytes += phase.bytes;
        self.metrics.phases.push(phase.clone());
        Ok(phase)
    }

    /// Runs `f` on the protocol only at quiescence; the verdict contract.
    pub fn when_quiescent<T>(&self, f: impl FnOnce(&P) -> T) -> Result<T, SimError> {
        if !self.is_quiescent() {
            return Err(SimError::NotQuiescent {
                pending: self.queue.len(),
            });
        }
        Ok(f(&self.proto))
    }
}
