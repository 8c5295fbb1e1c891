//! Waveform analytics used by the functional checks: peak detection,
//! least-squares line fitting, and period statistics.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("insufficient oscillation: need at least 3 peaks, found {0}")]
    InsufficientPeaks(usize),
    #[error("degenerate fit: x values are all equal")]
    DegenerateX,
    #[error("linear fit needs two equally long series of length >= 2")]
    BadFitInput,
    #[error("peak times must be strictly increasing")]
    NonMonotonicTimes,
}

/// Indices of local maxima whose prominence (height above the higher of
/// the two flanking minima, scanning out to the nearest strictly higher
/// sample or the array edge) reaches `min_prominence`.
///
/// Samples within one millionth of `min_prominence` of each other count
/// as ties; a tied run bounded by lower neighbors is one peak at the
/// middle of the plateau. Clipped waveforms therefore keep their tops,
/// and solver-tolerance ripple on a flat top cannot split it into a
/// parade of spurious full-prominence summits.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // negations double as NaN guards
pub fn find_peaks(signal: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = signal.len();
    let mut peaks = Vec::new();
    if n < 3 {
        return peaks;
    }
    let tie = min_prominence.abs() * 1e-6;
    let mut i = 1;
    while i < n {
        if !(signal[i] > signal[i - 1] + tie) {
            i += 1;
            continue;
        }
        // ascending into a candidate crest: track the running maximum,
        // treating anything within `tie` of it as part of the crest, until
        // the signal drops a full tie below the maximum (peak) or the
        // array ends (no peak)
        let mut h = signal[i];
        let mut j = i;
        while j + 1 < n && signal[j + 1] >= h - tie {
            j += 1;
            if signal[j] > h {
                h = signal[j];
            }
        }
        if j + 1 < n {
            // crest span: the tie-plateau around the maximum
            let first = (i..=j).find(|&k| signal[k] >= h - tie).unwrap_or(i);
            let last = (i..=j).rev().find(|&k| signal[k] >= h - tie).unwrap_or(j);
            let mut left_min = f64::INFINITY;
            let mut k = i;
            while k > 0 {
                k -= 1;
                if signal[k] > h + tie {
                    break;
                }
                left_min = left_min.min(signal[k]);
            }
            let mut right_min = f64::INFINITY;
            let mut k = j;
            while k + 1 < n {
                k += 1;
                if signal[k] > h + tie {
                    break;
                }
                right_min = right_min.min(signal[k]);
            }
            let prominence = h - left_min.max(right_min);
            if prominence >= min_prominence {
                peaks.push((first + last) / 2);
            }
        }
        i = j + 1;
    }
    peaks
}

/// Ordinary least-squares line through `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 1 - SS_res/SS_tot, defined as 1 when SS_tot = 0 and the residuals
    /// vanish.
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit, SignalError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(SignalError::BadFitInput);
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mean_x) * (xi - mean_x);
        sxy += (xi - mean_x) * (yi - mean_y);
    }
    if sxx == 0.0 {
        return Err(SignalError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let fit = slope * xi + intercept;
        ss_res += (yi - fit) * (yi - fit);
        ss_tot += (yi - mean_y) * (yi - mean_y);
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Mean period and spread of successive peak times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodStats {
    pub mean_period: f64,
    /// (max period - min period) / mean period.
    pub variability: f64,
}

pub fn period_stats(peak_times: &[f64]) -> Result<PeriodStats, SignalError> {
    if peak_times.len() < 3 {
        return Err(SignalError::InsufficientPeaks(peak_times.len()));
    }
    if peak_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SignalError::NonMonotonicTimes);
    }
    let periods: Vec<f64> = peak_times.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = periods.iter().sum::<f64>() / periods.len() as f64;
    let max = periods.iter().copied().fold(f64::MIN, f64::max);
    let min = periods.iter().copied().fold(f64::MAX, f64::min);
    Ok(PeriodStats {
        mean_period: mean,
        variability: (max - min) / mean,
    })
}
