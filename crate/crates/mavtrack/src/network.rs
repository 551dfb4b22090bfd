//! Simulated lossy, delayed inter-MAV message channel carrying converted
//! measurements and horizon plans.
//!
//! A broadcast is K-1 independent links: each receiver independently drops
//! the message with the configured probability, otherwise receives it after
//! a fixed delay plus truncated Gaussian jitter. Per-link seeded streams
//! make the delivery trace a pure function of the seed and send sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mpc::HorizonPlan;
use crate::sensing::{CartesianMeasurement, MavId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Measurement(CartesianMeasurement),
    Plan(HorizonPlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: MavId,
    /// Send time, s.
    pub stamp: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Per-link drop probability in `[0, 1]`.
    pub loss: f64,
    /// Fixed delivery delay, s.
    pub delay: f64,
    /// Gaussian jitter std, s (delays truncate at zero).
    pub jitter_std: f64,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            loss: 0.0,
            delay: 0.05,
            jitter_std: 0.02,
            seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(format!("loss must be in [0,1], got {}", self.loss));
        }
        if self.delay < 0.0 || self.jitter_std < 0.0 {
            return Err("delays must be non-negative".into());
        }
        Ok(())
    }

    /// Ideal channel: no loss, no delay.
    pub fn ideal(seed: u64) -> Self {
        Self {
            loss: 0.0,
            delay: 0.0,
            jitter_std: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
struct Delivery {
    time: f64,
    sender: MavId,
    seq: u64,
    message: Message,
}

/// Single event queue owned by the simulation loop.
pub struct Channel {
    params: ChannelParams,
    /// Per ordered link (sender, receiver): independent decision stream.
    link_rngs: Vec<ChaCha8Rng>,
    queues: Vec<Vec<Delivery>>,
    k: usize,
    seq: u64,
}

fn mix_seed(seed: u64, sender: u64, receiver: u64) -> u64 {
    let mut h = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(sender.wrapping_mul(0xd1b54a32d192ed03))
        .wrapping_add(receiver.wrapping_mul(0x94d049bb133111eb));
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 27;
    h
}

impl Channel {
    pub fn new(k: usize, params: ChannelParams) -> Self {
        let link_rngs = (0..k * k)
            .map(|idx| {
                let (s, r) = (idx / k, idx % k);
                ChaCha8Rng::seed_from_u64(mix_seed(params.seed, s as u64, r as u64))
            })
            .collect();
        Self {
            params,
            link_rngs,
            queues: vec![Vec::new(); k],
            k,
            seq: 0,
        }
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// Broadcast to every MAV except the sender. Each link decides drop and
    /// delay independently from its own stream.
    pub fn broadcast(&mut self, msg: &Message, now: f64) {
        for receiver in 0..self.k {
            if receiver == msg.sender {
                continue;
            }
            self.seq += 1;
            let rng = &mut self.link_rngs[msg.sender * self.k + receiver];
            let drop: f64 = rng.random();
            let jitter: f64 = rng.sample(StandardNormal);
            if drop < self.params.loss {
                continue;
            }
            let delay = (self.params.delay + self.params.jitter_std * jitter).max(0.0);
            self.queues[receiver].push(Delivery {
                time: now + delay,
                sender: msg.sender,
                seq: self.seq,
                message: msg.clone(),
            });
        }
    }

    /// Deliver every message due by `now`, ordered by (delivery time, sender,
    /// sequence); each message is delivered at most once.
    pub fn poll(&mut self, receiver: MavId, now: f64) -> Vec<Message> {
        let queue = &mut self.queues[receiver];
        let mut due: Vec<Delivery> = Vec::new();
        let mut rest: Vec<Delivery> = Vec::new();
        for d in queue.drain(..) {
            if d.time <= now {
                due.push(d);
            } else {
                rest.push(d);
            }
        }
        *queue = rest;
        due.sort_by(|a, b| {
            a.time
                .partial_cmp(&b.time)
                .unwrap()
                .then(a.sender.cmp(&b.sender))
                .then(a.seq.cmp(&b.seq))
        });
        due.into_iter().map(|d| d.message).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use nalgebra::Matrix3;

    fn msg(sender: MavId, stamp: f64) -> Message {
        Message {
            sender,
            stamp,
            payload: Payload::Measurement(CartesianMeasurement {
                mean: Vec3::new(stamp, 0.0, 0.0),
                cov: Matrix3::identity(),
            }),
        }
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let mut ch = Channel::new(3, ChannelParams {
            loss: 1.0,
            ..ChannelParams::default()
        });
        for t in 0..100 {
            ch.broadcast(&msg(0, t as f64), t as f64);
        }
        assert!(ch.poll(1, 1e9).is_empty());
        assert!(ch.poll(2, 1e9).is_empty());
    }

    #[test]
    fn ideal_channel_same_tick_delivery() {
        let mut ch = Channel::new(3, ChannelParams::ideal(1));
        ch.broadcast(&msg(0, 5.0), 5.0);
        assert_eq!(ch.poll(1, 5.0).len(), 1);
        assert_eq!(ch.poll(2, 5.0).len(), 1);
        // Sender never receives its own broadcast.
        assert!(ch.poll(0, 5.0).is_empty());
        // At-most-once.
        assert!(ch.poll(1, 5.0).is_empty());
    }

    #[test]
    fn delivery_order_by_time_then_sender() {
        let mut ch = Channel::new(3, ChannelParams {
            loss: 0.0,
            delay: 0.0,
            jitter_std: 0.0,
            seed: 0,
        });
        // Two sends at different times; poll after both are due.
        ch.broadcast(&msg(2, 0.1), 0.1);
        ch.broadcast(&msg(1, 0.2), 0.2);
        let got = ch.poll(0, 0.3);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].sender, 2);
        assert_eq!(got[1].sender, 1);

        // Not yet due: nothing.
        ch.broadcast(&msg(1, 0.4), 0.4);
        let mut late = Channel::new(2, ChannelParams {
            delay: 0.5,
            jitter_std: 0.0,
            ..ChannelParams::default()
        });
        late.broadcast(&msg(0, 0.0), 0.0);
        assert!(late.poll(1, 0.3).is_empty());
        assert_eq!(late.poll(1, 0.6).len(), 1);
    }

    #[test]
    fn loss_rate_statistics() {
        let mut ch = Channel::new(2, ChannelParams {
            loss: 0.5,
            delay: 0.0,
            jitter_std: 0.0,
            seed: 42,
        });
        let n = 10_000;
        for i in 0..n {
            ch.broadcast(&msg(0, i as f64), i as f64);
        }
        let delivered = ch.poll(1, 1e12).len() as f64 / n as f64;
        assert!(
            (0.48..=0.52).contains(&delivered),
            "delivered fraction {delivered}"
        );
    }

    #[test]
    fn deterministic_trace() {
        let run = |seed: u64| {
            let mut ch = Channel::new(4, ChannelParams {
                loss: 0.3,
                delay: 0.05,
                jitter_std: 0.02,
                seed,
            });
            for t in 0..50 {
                for s in 0..4 {
                    ch.broadcast(&msg(s, t as f64 * 0.1), t as f64 * 0.1);
                }
            }
            let mut trace = Vec::new();
            for r in 0..4 {
                for m in ch.poll(r, 1e9) {
                    trace.push((r, m.sender, m.stamp.to_bits()));
                }
            }
            trace
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn fifo_for_equal_delays() {
        let mut ch = Channel::new(2, ChannelParams {
            loss: 0.0,
            delay: 0.1,
            jitter_std: 0.0,
            seed: 0,
        });
        for i in 0..5 {
            ch.broadcast(&msg(0, i as f64 * 0.01), i as f64 * 0.01);
        }
        let got = ch.poll(1, 1.0);
        let stamps: Vec<f64> = got.iter().map(|m| m.stamp).collect();
        let mut sorted = stamps.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(stamps, sorted);
    }
}
