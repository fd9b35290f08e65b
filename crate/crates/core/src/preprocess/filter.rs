//! Butterworth high-pass, designed by bilinear transform and applied
//! forward-then-backward as a cascade of second-order sections.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::recording::Recording;

pub const DEFAULT_HIGHPASS_HZ: f64 = 0.53;
pub const DEFAULT_FILTER_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
    fn div(self, o: Self) -> Self {
        let d = o.re * o.re + o.im * o.im;
        Self::new((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)
    }
    fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// One biquad, `a0 = 1`, transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighPass {
    pub sections: Vec<Biquad>,
}

impl HighPass {
    pub fn butterworth(cutoff_hz: f64, order: usize, sample_rate_hz: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(Error::Parameter(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
            )));
        }
        if order == 0 {
            return Err(Error::Parameter("filter order must be >= 1".into()));
        }
        let fs2 = 2.0 * sample_rate_hz;
        let warped = fs2 * (PI * cutoff_hz / sample_rate_hz).tan();
        let mut sections = Vec::new();
        // Upper-half-plane prototype poles pair with their conjugates; an odd
        // order leaves the real pole at -1.
        for k in 0..order / 2 {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let proto = Complex::new(theta.cos(), theta.sin());
            let analog = Complex::new(warped, 0.0).div(proto);
            let z = Complex::new(fs2, 0.0).add(analog).div(Complex::new(fs2, 0.0).sub(analog));
            let a1 = -2.0 * z.re;
            let a2 = z.norm_sqr();
            // unity gain at Nyquist (z = -1)
            let g = (1.0 - a1 + a2) / 4.0;
            sections.push(Biquad { b: [g, -2.0 * g, g], a: [1.0, a1, a2] });
        }
        if order % 2 == 1 {
            let analog = -warped;
            let p = (fs2 + analog) / (fs2 - analog);
            let g = (1.0 + p) / 2.0;
            sections.push(Biquad { b: [g, -g, 0.0], a: [1.0, -p, 0.0] });
        }
        Ok(Self { sections })
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z1 = Complex::new(w.cos(), -w.sin());
        let z2 = Complex::new((2.0 * w).cos(), -(2.0 * w).sin());
        self.sections
            .iter()
            .map(|s| {
                let num = Complex::new(s.b[0] + s.b[1] * z1.re + s.b[2] * z2.re, s.b[1] * z1.im + s.b[2] * z2.im);
                let den = Complex::new(s.a[0] + s.a[1] * z1.re + s.a[2] * z2.re, s.a[1] * z1.im + s.a[2] * z2.im);
                (num.norm_sqr() / den.norm_sqr()).sqrt()
            })
            .product()
    }

    /// Single pass, states initialised to the steady-state response to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let mut level = x0;
        for s in &self.sections {
            let g = s.dc_gain();
            let y_ss = g * level;
            let mut z2 = s.b[2] * level - s.a[2] * y_ss;
            let mut z1 = y_ss - s.b[0] * level;
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * y + z2;
                z2 = s.b[2] * input - s.a[2] * y;
                *v = y;
            }
            level = y_ss;
        }
    }

    /// Zero-phase filtering with odd-reflection padding at both ends.
    pub fn filtfilt(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * signal[0] - signal[i]);
        }
        ext.extend_from_slice(signal);
        for i in 1..=pad {
            ext.push(2.0 * signal[n - 1] - signal[n - 1 - i]);
        }
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase Butterworth high-pass on every channel; the marker is untouched.
pub fn highpass_filter(rec: &Recording, cutoff_hz: f64, order: usize) -> Result<Recording> {
    let filter = HighPass::butterworth(cutoff_hz, order, rec.sample_rate_hz())?;
    let channels: Vec<Vec<f64>> =
        (0..rec.n_channels()).map(|c| filter.filtfilt(&rec.channel(c))).collect();
    rec.with_channels(&channels)
}
