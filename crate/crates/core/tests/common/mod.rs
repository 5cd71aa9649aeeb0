#![allow(dead_code)]

use cavity_beats::correlation::{Conditioning, CorrelationOptions};
use cavity_beats::records::{Channel, DetectionRecord, JumpEvent};

/// Direct O(n²) pair enumeration.
pub fn brute_force(r: &DetectionRecord, o: &CorrelationOptions) -> Vec<u64> {
    let mut h = vec![0u64; o.n_bins()];
    for (i, s) in r.events.iter().enumerate() {
        if !o.start_channels.contains(&s.channel) {
            continue;
        }
        let mut lags: Vec<u64> = r
            .events
            .iter()
            .enumerate()
            .filter(|(j, e)| *j != i && o.stop_channels.contains(&e.channel) && e.t_ps >= s.t_ps)
            .map(|(_, e)| e.t_ps - s.t_ps)
            .filter(|&d| d < o.tau_max_ps)
            .collect();
        lags.sort_unstable();
        if o.conditioning == Conditioning::StartStop {
            lags.truncate(1);
        }
        for d in lags {
            h[(d / o.bin_width_ps) as usize] += 1;
        }
    }
    h
}

/// Reference time filter written as a direct transcription of the rule.
pub fn reference_time_filter(times: &[u64], window: u64, skip: u64) -> Vec<u64> {
    let mut kept = Vec::new();
    let mut i = 0;
    while i < times.len() {
        if i + 1 < times.len() && times[i + 1] - times[i] < window {
            let until = times[i + 1] + skip;
            i += 2;
            while i < times.len() && times[i] <= until {
                i += 1;
            }
        } else {
            kept.push(times[i]);
            i += 1;
        }
    }
    kept
}

pub fn single_channel(times: &[u64], duration: u64) -> DetectionRecord {
    let mut r = DetectionRecord::new(duration, true);
    r.events = times.iter().map(|&t| JumpEvent::new(t, Channel::HDetA)).collect();
    r
}
