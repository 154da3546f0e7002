//! Seeded splitmix64 generator with Box-Muller normals.
//!
//! The transcendental functions come from `libm` so the stream is
//! bit-identical on every platform, not just on every run.

use super::Matrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    state: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on (0, 1): 53 high bits, with an exact zero bumped to 2^-53.
    pub fn next_uniform(&mut self) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53;
        if u == 0.0 {
            TWO_POW_NEG_53
        } else {
            u
        }
    }

    /// Uniform on `[lo, hi)`, built on [`RngState::next_uniform`].
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// One Box-Muller pair from two consecutive uniforms.
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * libm::cos(theta), r * libm::sin(theta))
    }

    /// Fills a `rows x cols` matrix with standard normals in row-major order.
    ///
    /// Both halves of every pair are used. When the entry count is odd the
    /// unused second half of the last pair is dropped, so the generator state
    /// stays a plain `u64`.
    pub fn randn_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let count = rows * cols;
        let mut data = Vec::with_capacity(count);
        while data.len() < count {
            let (a, b) = self.next_normal_pair();
            data.push(a);
            if data.len() < count {
                data.push(b);
            }
        }
        Matrix::from_vec(rows, cols, data).expect("buffer sized to shape")
    }
}

/// Free-function form of [`RngState::randn_matrix`].
pub fn randn_matrix(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    rng.randn_matrix(rows, cols)
}
