//! Hit-and-run Markov chain over a bounded polytope.
//!
//! The default step rule draws `λ ~ U[0, λ_max)` along the sampled direction
//! only (one-sided). `two_sided` switches to the classical chord
//! `λ ~ U[λ_min, λ_max)`, which is the variant with a uniform stationary law.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::poly::HPolytope;

#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    ChebyshevCenter,
    Given(DVector<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub seed: u64,
    pub count: usize,
    pub start: Start,
    pub two_sided: bool,
    /// Chain steps discarded before the first emitted point.
    pub burn_in: usize,
    /// Chain steps per emitted point (1 keeps every step).
    pub thin: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64, count: usize) -> Self {
        SamplerConfig {
            seed,
            count,
            start: Start::ChebyshevCenter,
            two_sided: false,
            burn_in: 0,
            thin: 1,
        }
    }
}

/// Step bounds `(λ_min, λ_max)` of the chord through `x` along `dir`.
fn chord(p: &HPolytope, x: &DVector<f64>, dir: &DVector<f64>) -> (f64, f64) {
    let slack = p.d() - p.c() * x;
    let rate = p.c() * dir;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (s, r) in slack.iter().zip(rate.iter()) {
        let s = s.max(0.0);
        if *r > 0.0 {
            hi = hi.min(s / r);
        } else if *r < 0.0 {
            lo = lo.max(s / r);
        }
    }
    (lo, hi)
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

pub fn hit_and_run(p: &HPolytope, cfg: &SamplerConfig) -> Result<Vec<DVector<f64>>> {
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if cfg.thin == 0 {
        return Err(Error::InvalidArgument("thinning interval must be at least 1".into()));
    }
    let n = p.dim();
    let mut x = match &cfg.start {
        Start::ChebyshevCenter => {
            let ball = p.chebyshev_center()?;
            if ball.flat {
                return Err(Error::Geometry(
                    "polytope has empty interior; hit-and-run needs an interior start".into(),
                ));
            }
            ball.center
        }
        Start::Given(x) => {
            if x.len() != n {
                return Err(Error::dim("sampler start point", n, x.len()));
            }
            if !p.contains(x, 0.0) {
                return Err(Error::InvalidArgument("start point lies outside the polytope".into()));
            }
            x.clone()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = |x: &mut DVector<f64>| -> Result<()> {
        let dir = unit_direction(&mut rng, n);
        let (lo, hi) = chord(p, x, &dir);
        if !hi.is_finite() || (cfg.two_sided && !lo.is_finite()) {
            return Err(Error::Geometry(format!(
                "polytope is unbounded along direction {:?}",
                dir.as_slice()
            )));
        }
        let lo = if cfg.two_sided { lo } else { 0.0 };
        let u: f64 = rng.gen();
        let lambda = lo + u * (hi - lo);
        *x += lambda * dir;
        Ok(())
    };

    for _ in 0..cfg.burn_in {
        step(&mut x)?;
    }
    let mut out = Vec::with_capacity(cfg.count);
    out.push(x.clone());
    while out.len() < cfg.count {
        for _ in 0..cfg.thin {
            step(&mut x)?;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Dataset states: a one-sided chain started at the Chebyshev center.
pub fn sample_states(c_inf: &HPolytope, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    hit_and_run(c_inf, &SamplerConfig::new(seed, n))
}

/// CSV with header `x1,...,xn`, one point per row, shortest round-trip decimals.
pub fn points_to_csv(points: &[DVector<f64>], dim: usize) -> String {
    let mut s = (1..=dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn write_points_csv(path: &std::path::Path, points: &[DVector<f64>], dim: usize) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(points_to_csv(points, dim).as_bytes())?;
    Ok(())
}
