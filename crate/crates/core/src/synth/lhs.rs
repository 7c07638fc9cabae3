use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::prior::FlightCondition;

/// Random designs tried by [`maximin_lhs`].
pub const LHS_TRIES: usize = 100;

/// Latin hypercube of `count` points in `[0, 1)^dims`: each coordinate
/// has exactly one point in each of the `count` equal bins.
pub fn latin_hypercube<R: Rng + ?Sized>(count: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; count];
    let mut bins: Vec<usize> = (0..count).collect();
    for d in 0..dims {
        bins.shuffle(rng);
        for (p, &b) in points.iter_mut().zip(&bins) {
            p[d] = (b as f64 + rng.random::<f64>()) / count as f64;
        }
    }
    points
}

/// Smallest pairwise Euclidean distance; infinite for fewer than two points.
pub fn maximin_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d);
        }
    }
    best.sqrt()
}

/// Best of `tries` random Latin hypercubes by [`maximin_distance`].
pub fn maximin_lhs(count: usize, dims: usize, tries: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = latin_hypercube(count, dims, &mut rng);
    let mut score = maximin_distance(&best);
    for _ in 1..tries {
        let cand = latin_hypercube(count, dims, &mut rng);
        let s = maximin_distance(&cand);
        if s > score {
            best = cand;
            score = s;
        }
    }
    best
}

/// Box of flight conditions sampled by [`design_conditions`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignBounds {
    pub mach: (f64, f64),
    pub reynolds_millions: (f64, f64),
    pub alpha_deg: (f64, f64),
}

impl Default for DesignBounds {
    /// The envelope of the eleven test conditions.
    fn default() -> Self {
        DesignBounds {
            mach: (0.6, 0.75),
            reynolds_millions: (2.7, 6.5),
            alpha_deg: (-2.18, 3.22),
        }
    }
}

/// Maximin Latin hypercube design of `count` conditions.
pub fn design_conditions(count: usize, bounds: &DesignBounds, seed: u64) -> Vec<FlightCondition> {
    let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
    maximin_lhs(count, 3, LHS_TRIES, seed)
        .into_iter()
        .map(|p| {
            FlightCondition::new(
                lerp(bounds.mach, p[0]),
                lerp(bounds.reynolds_millions, p[1]),
                lerp(bounds.alpha_deg, p[2]),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = latin_hypercube(20, 3, &mut rng);
        for d in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[d] * 20.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn best_of_many_beats_single_draw() {
        let mut wins = 0;
        for trial in 0..100u64 {
            let best = maximin_distance(&maximin_lhs(20, 3, LHS_TRIES, trial));
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
            let single = maximin_distance(&latin_hypercube(20, 3, &mut rng));
            if best >= single {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}");
    }

    #[test]
    fn design_stays_in_bounds() {
        let b = DesignBounds::default();
        for c in design_conditions(40, &b, 3) {
            assert!(c.mach >= b.mach.0 && c.mach <= b.mach.1);
            assert!(c.alpha_deg >= b.alpha_deg.0 && c.alpha_deg <= b.alpha_deg.1);
        }
    }
}
