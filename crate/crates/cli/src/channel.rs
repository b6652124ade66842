//! Simulated acoustic link: finite rate, fixed latency, i.i.d. drops.
//!
//! Each underwater vehicle has its own link to the surface vehicle. A message
//! occupies its link for `bits / rate` seconds (queueing behind earlier
//! messages from the same sender), then arrives `latency` later, so per-robot
//! delivery order is preserved. No clocks are involved: everything is a pure
//! function of send times, sizes, and the seed.

use tideline_core::codec::{message_size_bits, AuvMessage};
use tideline_core::rng::{label, Pcg32};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    /// Link rate in kbits/second (per sender).
    pub rate_kbits_per_s: f64,
    /// Propagation latency, seconds.
    pub latency_s: f64,
    /// Independent drop probability per message.
    pub drop_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SentMessage {
    pub send_time: f64,
    pub message: AuvMessage,
    /// Serialized wire bytes; the receiver works from these.
    pub bytes: Vec<u8>,
}

impl SentMessage {
    pub fn new(send_time: f64, message: AuvMessage) -> Self {
        let bytes = message.serialize();
        SentMessage {
            send_time,
            message,
            bytes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeliveredMessage {
    pub arrival_time: f64,
    pub send_time: f64,
    pub bits: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct ChannelLog {
    pub delivered: Vec<DeliveredMessage>,
    pub dropped: Vec<(f64, u16, u32)>,
    pub delivered_bits: u64,
}

/// Run every sent message through the link. Input must be sorted by send
/// time per robot; output is sorted by arrival time (ties by send time then
/// robot id, so replays are stable).
pub fn run_channel(messages: &[SentMessage], spec: &ChannelSpec) -> ChannelLog {
    assert!(spec.rate_kbits_per_s > 0.0, "channel rate must be positive");
    let mut rng = Pcg32::stream(spec.seed, label("channel"));
    let mut log = ChannelLog::default();
    let mut busy_until: Vec<(u16, f64)> = Vec::new();
    for sent in messages {
        let robot = sent.message.robot_id;
        let dropped = spec.drop_prob > 0.0 && rng.chance(spec.drop_prob);
        if dropped {
            log.dropped
                .push((sent.send_time, robot, sent.message.keyframe_index));
            continue;
        }
        let bits = message_size_bits(&sent.message);
        debug_assert_eq!(bits, 8 * sent.bytes.len() as u64);
        let serialization_s = bits as f64 / (spec.rate_kbits_per_s * 1000.0);
        let busy = match busy_until.iter_mut().find(|(id, _)| *id == robot) {
            Some(entry) => entry,
            None => {
                busy_until.push((robot, 0.0));
                busy_until.last_mut().expect("just pushed")
            }
        };
        let start = sent.send_time.max(busy.1);
        busy.1 = start + serialization_s;
        log.delivered.push(DeliveredMessage {
            arrival_time: busy.1 + spec.latency_s,
            send_time: sent.send_time,
            bits,
            bytes: sent.bytes.clone(),
        });
        log.delivered_bits += bits;
    }
    log.delivered.sort_by(|a, b| {
        a.arrival_time
            .total_cmp(&b.arrival_time)
            .then(a.send_time.total_cmp(&b.send_time))
    });
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use tideline_core::codec::RectPatchSet;
    use tideline_core::geom::Pose2;
    use tideline_core::mat3::Mat3;

    fn message(robot: u16, kf: u32) -> AuvMessage {
        AuvMessage::new(
            robot,
            kf,
            Pose2::identity(),
            Mat3::diag(0.1, 0.1, 0.01),
            RectPatchSet::default(),
        )
        .unwrap()
    }

    #[test]
    fn ideal_link_preserves_send_times() {
        let sent: Vec<SentMessage> = (0..5)
            .map(|k| SentMessage::new(k as f64, message(1, k)))
            .collect();
        let spec = ChannelSpec {
            rate_kbits_per_s: 1e9,
            latency_s: 0.0,
            drop_prob: 0.0,
            seed: 0,
        };
        let log = run_channel(&sent, &spec);
        assert_eq!(log.delivered.len(), 5);
        for (d, s) in log.delivered.iter().zip(sent.iter()) {
            assert!((d.arrival_time - s.send_time) < 1e-6);
        }
    }

    #[test]
    fn serialization_delay_matches_size_over_rate() {
        let m = message(1, 0);
        let bits = message_size_bits(&m) as f64;
        let spec = ChannelSpec {
            rate_kbits_per_s: bits / 1000.0, // one second per message
            latency_s: 0.25,
            drop_prob: 0.0,
            seed: 0,
        };
        let log = run_channel(&[SentMessage::new(2.0, m)], &spec);
        assert!((log.delivered[0].arrival_time - 3.25).abs() < 1e-9);
    }

    #[test]
    fn queueing_keeps_per_robot_order() {
        // Two messages sent back to back at a rate of one second each: the
        // second serializes after the first finishes.
        let m0 = message(1, 0);
        let bits = message_size_bits(&m0) as f64;
        let sent = vec![
            SentMessage::new(0.0, m0),
            SentMessage::new(0.1, message(1, 1)),
        ];
        let spec = ChannelSpec {
            rate_kbits_per_s: bits / 1000.0,
            latency_s: 0.0,
            drop_prob: 0.0,
            seed: 0,
        };
        let log = run_channel(&sent, &spec);
        assert!((log.delivered[0].arrival_time - 1.0).abs() < 1e-9);
        assert!((log.delivered[1].arrival_time - 2.0).abs() < 1e-9);
    }

    #[test]
    fn drop_rate_within_binomial_band() {
        let sent: Vec<SentMessage> = (0..10_000)
            .map(|k| SentMessage::new(k as f64 * 0.01, message(1 + (k % 3) as u16, k)))
            .collect();
        let spec = ChannelSpec {
            rate_kbits_per_s: 1e9,
            latency_s: 0.0,
            drop_prob: 0.3,
            seed: 42,
        };
        let log = run_channel(&sent, &spec);
        let delivered_fraction = log.delivered.len() as f64 / sent.len() as f64;
        // 99% band around 0.7 for n = 10000: about +/- 0.012.
        assert!(
            (delivered_fraction - 0.7).abs() < 0.012,
            "delivered fraction {delivered_fraction}"
        );
        assert_eq!(log.delivered.len() + log.dropped.len(), sent.len());
    }

    #[test]
    fn accounting_matches_codec_sizes() {
        let sent: Vec<SentMessage> = (0..20)
            .map(|k| SentMessage::new(k as f64, message(1, k)))
            .collect();
        let expected: u64 = sent.iter().map(|s| message_size_bits(&s.message)).sum();
        let spec = ChannelSpec {
            rate_kbits_per_s: 10.0,
            latency_s: 0.5,
            drop_prob: 0.0,
            seed: 1,
        };
        let log = run_channel(&sent, &spec);
        assert_eq!(log.delivered_bits, expected);
        let byte_bits: u64 = log.delivered.iter().map(|d| 8 * d.bytes.len() as u64).sum();
        assert_eq!(byte_bits, expected);
    }
}
