use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `x + e` with `e ~ N(0, sigma^2 I)`. `sigma = 0` returns `x` unchanged and draws nothing.
pub fn add_noise<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    add_noise_in_place(&mut out, sigma, rng);
    out
}

pub(crate) fn add_noise_in_place<R: Rng + ?Sized>(x: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated as finite and >= 0");
    for v in x {
        *v += normal.sample(rng);
    }
}
