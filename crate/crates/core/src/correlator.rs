//! Start–multistop cross-correlation of two tag channels into a g² histogram.
//!
//! Delays are `τ = t_b − t_a` (channel B relative to channel A). Bins are
//! half-open, `[−T + k·w, −T + (k+1)·w)`, so a pair at exactly `+T` is not
//! counted and adjacent partitions never share a pair.
//!
//! Three routes produce bitwise-identical counts:
//! [`cross_correlate`] (one sorted-merge pass over in-memory channels),
//! [`cross_correlate_parallel`] (time partitions of channel A owned by
//! worker threads, each reading B over its partition widened by `T` on both
//! sides; partition histograms are summed), and [`StreamingCorrelator`]
//! (bounded-memory ingestion of a merged tag stream in arbitrary chunks).

use std::collections::VecDeque;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tags::{check_sorted, Channel, Tag, TagError, TagStream};

pub const HISTOGRAM_CSV_HEADER: &str = "tau_ps,count,g2,g2_err";

#[derive(Debug, Error)]
pub enum CorrelatorError {
    #[error("bin width {w} ps must be > 0 and divide the full range 2·{range} ps")]
    BadBinning { w: u64, range: u64 },
    #[error("unsorted input: {0}")]
    Unsorted(#[from] TagError),
    #[error("zero-length acquisition; cannot normalize")]
    ZeroAcquisition,
    #[error("streaming input went back in time: {current} ps after {previous} ps")]
    StreamOrder { previous: u64, current: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coincidence histogram with its normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Histogram {
    pub bin_width_ps: u64,
    pub range_ps: u64,
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    pub t_total_ps: u64,
    pub g2: Vec<f64>,
    pub g2_err: Vec<f64>,
}

impl G2Histogram {
    fn empty(w: u64, range: u64) -> Result<Self, CorrelatorError> {
        if w == 0 || range == 0 || (2 * range) % w != 0 {
            return Err(CorrelatorError::BadBinning { w, range });
        }
        Ok(Self {
            bin_width_ps: w,
            range_ps: range,
            counts: vec![0; (2 * range / w) as usize],
            n_a: 0,
            n_b: 0,
            t_total_ps: 0,
            g2: Vec::new(),
            g2_err: Vec::new(),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Left edge of bin `k` in ps.
    pub fn bin_start_ps(&self, k: usize) -> i64 {
        -(self.range_ps as i64) + (k as i64) * self.bin_width_ps as i64
    }

    /// Bin center in ps.
    pub fn bin_center_ps(&self, k: usize) -> f64 {
        self.bin_start_ps(k) as f64 + 0.5 * self.bin_width_ps as f64
    }

    /// Index of the bin holding delay `tau_ps`, if inside `[−T, T)`.
    pub fn bin_of(&self, tau_ps: i64) -> Option<usize> {
        let shifted = tau_ps + self.range_ps as i64;
        if shifted < 0 || shifted >= 2 * self.range_ps as i64 {
            return None;
        }
        Some((shifted as u64 / self.bin_width_ps) as usize)
    }

    /// Fills `g2` and `g2_err` from the counts, with `t_total` the acquisition span.
    ///
    /// `g2 = count · t_total / (n_a n_b w)` and `g2_err = √count · t_total / (n_a n_b w)`.
    pub fn normalize(&mut self, t_total_ps: u64) -> Result<(), CorrelatorError> {
        if t_total_ps == 0 {
            return Err(CorrelatorError::ZeroAcquisition);
        }
        self.t_total_ps = t_total_ps;
        let denom = self.n_a as f64 * self.n_b as f64 * self.bin_width_ps as f64;
        let scale = if denom > 0.0 { t_total_ps as f64 / denom } else { 0.0 };
        self.g2 = self.counts.iter().map(|&c| c as f64 * scale).collect();
        self.g2_err = self.counts.iter().map(|&c| (c as f64).sqrt() * scale).collect();
        Ok(())
    }

    /// Bin-wise sum of two histograms with identical binning.
    pub fn merge(&mut self, other: &G2Histogram) {
        assert_eq!(
            (self.bin_width_ps, self.range_ps),
            (other.bin_width_ps, other.range_ps),
            "merging histograms with different binning"
        );
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self.n_a += other.n_a;
        self.n_b += other.n_b;
    }

    /// Writes `tau_ps,count,g2,g2_err` rows, τ at bin centers. Unnormalized
    /// histograms write empty g2 columns.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), CorrelatorError> {
        writeln!(out, "{HISTOGRAM_CSV_HEADER}")?;
        for k in 0..self.n_bins() {
            let tau = self.bin_center_ps(k);
            match (self.g2.get(k), self.g2_err.get(k)) {
                (Some(g), Some(e)) => writeln!(out, "{tau},{},{g},{e}", self.counts[k])?,
                _ => writeln!(out, "{tau},{},,", self.counts[k])?,
            }
        }
        Ok(())
    }

    /// Delays (s), values and errors of the normalized histogram, with each
    /// error floored at one count so that empty bins keep a finite weight.
    pub fn fit_series(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let denom = self.n_a as f64 * self.n_b as f64 * self.bin_width_ps as f64;
        let scale = self.t_total_ps as f64 / denom;
        let x = (0..self.n_bins()).map(|k| self.bin_center_ps(k) * 1e-12).collect();
        let y = self.counts.iter().map(|&c| c as f64 * scale).collect();
        let s = self.counts.iter().map(|&c| (c.max(1) as f64).sqrt() * scale).collect();
        (x, y, s)
    }
}

/// Adds all pairs with `a ∈ a_owned` and any `b ∈ b_all` to `counts`.
fn accumulate(counts: &mut [u64], a_owned: &[u64], b_all: &[u64], w: u64, range: u64) {
    let mut lo = 0usize;
    for &ta in a_owned {
        let window_start = ta.saturating_sub(range);
        // B tags below ta − T can never pair with this or any later A tag.
        while lo < b_all.len() && b_all[lo] < window_start {
            lo += 1;
        }
        let end = ta.saturating_add(range);
        for &tb in b_all[lo..].iter().take_while(|&&tb| tb < end) {
            // tb ≥ ta − T: the shifted delay lies in [0, 2T), exact under wrapping.
            counts[(tb.wrapping_add(range).wrapping_sub(ta) / w) as usize] += 1;
        }
    }
}

/// Single-pass sorted-merge correlation of two channels.
pub fn cross_correlate(a: &[u64], b: &[u64], w_ps: u64, range_ps: u64) -> Result<G2Histogram, CorrelatorError> {
    let mut h = G2Histogram::empty(w_ps, range_ps)?;
    check_sorted(a.iter().copied())?;
    check_sorted(b.iter().copied())?;
    accumulate(&mut h.counts, a, b, w_ps, range_ps);
    h.n_a = a.len() as u64;
    h.n_b = b.len() as u64;
    Ok(h)
}

/// Time-partitioned parallel correlation. Each partition owns the A tags in
/// its time slice and sees B over the slice widened by `T` on both sides;
/// the result equals [`cross_correlate`] bit for bit.
pub fn cross_correlate_parallel(
    a: &[u64],
    b: &[u64],
    w_ps: u64,
    range_ps: u64,
    partitions: usize,
) -> Result<G2Histogram, CorrelatorError> {
    let mut h = G2Histogram::empty(w_ps, range_ps)?;
    check_sorted(a.iter().copied())?;
    check_sorted(b.iter().copied())?;
    let partitions = partitions.max(1);
    let (Some(&first), Some(&last)) = (a.first(), a.last()) else {
        h.n_b = b.len() as u64;
        return Ok(h);
    };
    let span = last - first + 1;
    let slice = span.div_ceil(partitions as u64).max(1);
    let edges: Vec<usize> = (0..=partitions)
        .map(|p| {
            let t = first.saturating_add(slice.saturating_mul(p as u64));
            a.partition_point(|&x| x < t)
        })
        .collect();
    let partial: Vec<Vec<u64>> = edges
        .par_windows(2)
        .map(|e| {
            let owned = &a[e[0]..e[1]];
            let mut counts = vec![0u64; h.counts.len()];
            if let (Some(&t0), Some(&t1)) = (owned.first(), owned.last()) {
                let b_lo = b.partition_point(|&x| x < t0.saturating_sub(range_ps));
                let b_hi = b.partition_point(|&x| x < t1.saturating_add(range_ps));
                accumulate(&mut counts, owned, &b[b_lo..b_hi], w_ps, range_ps);
            }
            counts
        })
        .collect();
    for counts in partial {
        for (c, p) in h.counts.iter_mut().zip(counts) {
            *c += p;
        }
    }
    h.n_a = a.len() as u64;
    h.n_b = b.len() as u64;
    Ok(h)
}

/// Correlates channels A and B of a merged stream and normalizes by its span.
pub fn correlate_stream(stream: &TagStream, w_ps: u64, range_ps: u64, partitions: usize) -> Result<G2Histogram, CorrelatorError> {
    let a = stream.channel(Channel::A);
    let b = stream.channel(Channel::B);
    let mut h = if partitions > 1 {
        cross_correlate_parallel(&a, &b, w_ps, range_ps, partitions)?
    } else {
        cross_correlate(&a, &b, w_ps, range_ps)?
    };
    let (lo, hi) = stream.bounds().ok_or(CorrelatorError::ZeroAcquisition)?;
    h.normalize(hi - lo)?;
    Ok(h)
}

/// Bounded-memory correlator over a merged, time-ordered tag stream fed in
/// chunks. Only tags within `T` of the newest one are retained.
#[derive(Debug, Clone)]
pub struct StreamingCorrelator {
    hist: G2Histogram,
    recent_a: VecDeque<u64>,
    recent_b: VecDeque<u64>,
    first: Option<u64>,
    last: Option<u64>,
}

impl StreamingCorrelator {
    pub fn new(w_ps: u64, range_ps: u64) -> Result<Self, CorrelatorError> {
        Ok(Self {
            hist: G2Histogram::empty(w_ps, range_ps)?,
            recent_a: VecDeque::new(),
            recent_b: VecDeque::new(),
            first: None,
            last: None,
        })
    }

    pub fn push(&mut self, tag: Tag) -> Result<(), CorrelatorError> {
        let t = tag.timestamp_ps;
        if let Some(prev) = self.last {
            if t < prev {
                return Err(CorrelatorError::StreamOrder { previous: prev, current: t });
            }
        }
        self.first.get_or_insert(t);
        self.last = Some(t);
        let range = self.hist.range_ps;
        let w = self.hist.bin_width_ps;
        let floor = t.saturating_sub(range);
        while self.recent_a.front().is_some_and(|&x| x < floor) {
            self.recent_a.pop_front();
        }
        while self.recent_b.front().is_some_and(|&x| x < floor) {
            self.recent_b.pop_front();
        }
        match tag.channel {
            Channel::B => {
                // τ = t − a ∈ [0, T): a > t − T.
                for &a in self.recent_a.iter().rev() {
                    let tau = t - a;
                    if tau >= range {
                        break;
                    }
                    self.hist.counts[(tau.wrapping_add(range) / w) as usize] += 1;
                }
                self.recent_b.push_back(t);
                self.hist.n_b += 1;
            }
            Channel::A => {
                // τ = b − t ∈ [−T, 0]: b ≥ t − T, guaranteed by the eviction above.
                for &b in self.recent_b.iter() {
                    let tau = b.wrapping_add(range).wrapping_sub(t);
                    self.hist.counts[(tau / w) as usize] += 1;
                }
                self.recent_a.push_back(t);
                self.hist.n_a += 1;
            }
        }
        Ok(())
    }

    pub fn push_chunk(&mut self, tags: &[Tag]) -> Result<(), CorrelatorError> {
        tags.iter().try_for_each(|&t| self.push(t))
    }

    /// Tags currently held in the sliding window.
    pub fn buffered(&self) -> usize {
        self.recent_a.len() + self.recent_b.len()
    }

    /// Normalizes over the span of everything pushed.
    pub fn finish(mut self) -> Result<G2Histogram, CorrelatorError> {
        let span = match (self.first, self.last) {
            (Some(f), Some(l)) => l - f,
            _ => 0,
        };
        self.hist.normalize(span)?;
        Ok(self.hist)
    }

    /// Raw counts so far, without normalization.
    pub fn histogram(&self) -> &G2Histogram {
        &self.hist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(a: &[u64], b: &[u64], w: u64, range: u64) -> Vec<u64> {
        let mut c = vec![0; (2 * range / w) as usize];
        for &x in a {
            for &y in b {
                let tau = y as i64 - x as i64;
                if tau >= -(range as i64) && tau < range as i64 {
                    c[((tau + range as i64) as u64 / w) as usize] += 1;
                }
            }
        }
        c
    }

    #[test]
    fn shifted_copy_lands_in_one_bin() {
        let a: Vec<u64> = (0..1000u64).map(|i| 1_000_000 + i * 777_777).collect();
        let b: Vec<u64> = a.iter().map(|t| t + 5_000).collect();
        let h = cross_correlate(&a, &b, 1_000, 50_000).unwrap();
        let k = h.bin_of(5_000).unwrap();
        assert_eq!(h.counts[k], 1000);
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn edges_are_half_open() {
        let h = cross_correlate(&[100], &[90, 100, 110], 10, 10).unwrap();
        // τ = −10 → bin 0, τ = 0 → bin 1, τ = +10 excluded.
        assert_eq!(h.counts, vec![1, 1]);
    }

    #[test]
    fn near_zero_timestamps() {
        let a = [0, 3, 5];
        let b = [0, 1, 2, 9];
        let h = cross_correlate(&a, &b, 2, 6).unwrap();
        assert_eq!(h.counts, brute(&a, &b, 2, 6));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(cross_correlate(&[1], &[1], 3, 5), Err(CorrelatorError::BadBinning { .. })));
        assert!(matches!(cross_correlate(&[1], &[1], 0, 5), Err(CorrelatorError::BadBinning { .. })));
        assert!(matches!(cross_correlate(&[5, 1], &[1], 1, 5), Err(CorrelatorError::Unsorted(_))));
        let mut h = cross_correlate(&[1], &[1], 1, 5).unwrap();
        assert!(matches!(h.normalize(0), Err(CorrelatorError::ZeroAcquisition)));
    }

    #[test]
    fn normalization_is_intensive() {
        let mut h = G2Histogram::empty(10, 20).unwrap();
        h.counts = vec![0, 4, 9, 16];
        h.n_a = 100;
        h.n_b = 200;
        h.normalize(50_000).unwrap();
        assert_eq!((h.g2[0], h.g2_err[0]), (0.0, 0.0));
        let mut scaled = h.clone();
        scaled.counts.iter_mut().for_each(|c| *c *= 4);
        scaled.n_a *= 4;
        scaled.n_b *= 4;
        scaled.normalize(200_000).unwrap();
        for (x, y) in h.g2.iter().zip(&scaled.g2) {
            assert!((x - y).abs() < 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn streaming_matches_batch_with_ties() {
        let a = [10, 20, 20, 35, 60];
        let b = [20, 20, 25, 40, 61, 80];
        let stream = TagStream::from_channels(&a, &b).unwrap();
        let batch = cross_correlate(&a, &b, 5, 25).unwrap();
        // B-before-A ordering on ties too.
        let mut tags = stream.tags().to_vec();
        tags.sort_by_key(|t| (t.timestamp_ps, std::cmp::Reverse(t.channel)));
        for order in [stream.tags().to_vec(), tags] {
            let mut s = StreamingCorrelator::new(5, 25).unwrap();
            for chunk in order.chunks(2) {
                s.push_chunk(chunk).unwrap();
            }
            assert_eq!(s.histogram().counts, batch.counts);
        }
    }

    #[test]
    fn csv_layout() {
        let mut h = cross_correlate(&[100], &[105], 10, 10).unwrap();
        h.normalize(1000).unwrap();
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "tau_ps,count,g2,g2_err\n-5,0,0,0\n5,1,100,100\n");
    }
}
