//! Imputation error metrics: plain RMSE and the RMSE between short-time
//! Fourier magnitude spectra (25 ms frames, 12 ms hop, Hann window).

use anyhow::{bail, Result};
use rustfft::{num_complex::Complex, FftPlanner};

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        bail!("length mismatch: {} predictions vs {} targets", pred.len(), truth.len());
    }
    if pred.is_empty() {
        bail!("rmse of empty vectors");
    }
    let sum: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

pub(crate) fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()))
        .collect()
}

pub(crate) fn stft_geometry(sample_rate_hz: f64) -> (usize, usize) {
    let frame = (0.025 * sample_rate_hz).round() as usize;
    let hop = (0.012 * sample_rate_hz).round() as usize;
    (frame.max(1), hop.max(1))
}

/// One-sided magnitude spectra of every frame; frames start at multiples of
/// the hop and must fit entirely inside the signal.
fn magnitude_frames(signal: &[f64], frame: usize, hop: usize) -> Vec<Vec<f64>> {
    let window = hann_window(frame);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(frame);
    let bins = frame / 2 + 1;
    let mut out = Vec::new();
    let mut start = 0;
    while start + frame <= signal.len() {
        let mut buf: Vec<Complex<f64>> = (0..frame)
            .map(|i| Complex::new(signal[start + i] * window[i], 0.0))
            .collect();
        fft.process(&mut buf);
        out.push(buf[..bins].iter().map(|c| c.norm()).collect());
        start += hop;
    }
    out
}

/// RMSE between the short-time Fourier magnitude spectra of two signals,
/// averaged over all frames and frequency bins.
pub fn stft_rmse(pred: &[f64], truth: &[f64], sample_rate_hz: f64) -> Result<f64> {
    if pred.len() != truth.len() {
        bail!("length mismatch: {} vs {}", pred.len(), truth.len());
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        bail!("sample rate must be positive, got {sample_rate_hz}");
    }
    let (frame, hop) = stft_geometry(sample_rate_hz);
    if pred.len() < frame {
        bail!("signal of {} samples is shorter than one {frame}-sample frame", pred.len());
    }
    let mp = magnitude_frames(pred, frame, hop);
    let mt = magnitude_frames(truth, frame, hop);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (fp, ft) in mp.iter().zip(mt.iter()) {
        for (a, b) in fp.iter().zip(ft.iter()) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let pred = [3.0, 4.0];
        let truth = [0.0, 0.0];
        assert!((rmse(&pred, &truth).unwrap() - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert!(rmse(&a, &[1.0]).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_computation() {
        let pred: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let truth: Vec<f64> = (0..100).map(|i| (i as f64 * 0.11).cos()).collect();
        let got = rmse(&pred, &truth).unwrap();
        // naive: mean first, then squared deviations scaled back
        let mut acc = 0.0;
        for i in 0..100 {
            acc += (pred[i] - truth[i]).powi(2) / 100.0;
        }
        assert!((got - acc.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stft_rmse_identical_signals_is_zero() {
        let sig: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin()).collect();
        assert_eq!(stft_rmse(&sig, &sig, 16_000.0).unwrap(), 0.0);
        let zeros = vec![0.0; 2000];
        assert_eq!(stft_rmse(&zeros, &zeros, 16_000.0).unwrap(), 0.0);
    }

    #[test]
    fn stft_rmse_rejects_short_signals() {
        let sig = vec![0.0; 10];
        assert!(stft_rmse(&sig, &sig, 16_000.0).is_err());
    }

    /// Cross-check the FFT path against a direct O(n^2) windowed DFT.
    #[test]
    fn stft_rmse_matches_naive_dft() {
        let rate = 16_000.0;
        let (frame, hop) = stft_geometry(rate);
        assert_eq!((frame, hop), (400, 192));
        let n = 1500;
        let pred: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate).sin())
            .collect();
        let truth = vec![0.0; n];
        let got = stft_rmse(&pred, &truth, rate).unwrap();

        // naive DFT oracle
        let window = hann_window(frame);
        let bins = frame / 2 + 1;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut start = 0;
        while start + frame <= n {
            for bin in 0..bins {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..frame {
                    let angle = -2.0 * std::f64::consts::PI * (bin * i) as f64 / frame as f64;
                    let v = pred[start + i] * window[i];
                    re += v * angle.cos();
                    im += v * angle.sin();
                }
                let mag = (re * re + im * im).sqrt();
                sum += mag * mag; // truth spectrum is zero
                count += 1;
            }
            start += hop;
        }
        let want = (sum / count as f64).sqrt();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}
