//! Seeded k-means with k-means++ initialization.
//!
//! Plain Lloyd iterations over fixed-dimension points. The `spherical` flag
//! renormalizes centroids to the unit sphere after every update step, which
//! is how quaternion deltas are clustered (chordal distance on the w >= 0
//! hemisphere). Everything is sequential and seed-driven, so a fit is
//! bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub(crate) struct KMeansOptions {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub spherical: bool,
}

fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn nearest<const D: usize>(centroids: &[[f64; D]], p: &[f64; D]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist_sq(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init<const D: usize>(
    points: &[[f64; D]],
    k: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<[f64; D]> {
    let n = points.len();
    let mut centroids: Vec<[f64; D]> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    centroids.push(points[first]);
    chosen[first] = true;

    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining points coincide with a centroid; take the next
            // unchosen index for determinism
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[idx] = true;
        centroids.push(points[idx]);
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(p, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn renormalize<const D: usize>(c: &mut [f64; D]) {
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in c.iter_mut() {
            *x /= norm;
        }
    }
}

pub(crate) fn run<const D: usize>(
    points: &[[f64; D]],
    opts: &KMeansOptions,
    seed: u64,
) -> Vec<[f64; D]> {
    assert!(opts.k >= 1 && points.len() >= opts.k);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, opts.k, &mut rng);

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..opts.max_iters {
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest(&centroids, p).0;
        }
        let mut sums = vec![[0.0f64; D]; opts.k];
        let mut counts = vec![0usize; opts.k];
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for d in 0..D {
                sums[c][d] += p[d];
            }
        }
        let mut max_shift: f64 = 0.0;
        for c in 0..opts.k {
            if counts[c] == 0 {
                // empty cluster keeps its previous centroid
                continue;
            }
            let mut new_c = sums[c];
            for d in 0..D {
                new_c[d] /= counts[c] as f64;
            }
            if opts.spherical {
                renormalize(&mut new_c);
            }
            max_shift = max_shift.max(dist_sq(&centroids[c], &new_c).sqrt());
            centroids[c] = new_c;
        }
        if max_shift < opts.tol {
            break;
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_of_identical_points() {
        let points = vec![[1.0, 2.0, 3.0]; 20];
        let c = run(&points, &KMeansOptions { k: 1, max_iters: 100, tol: 1e-8, spherical: false }, 0);
        assert_eq!(c.len(), 1);
        for d in 0..3 {
            assert!((c[0][d] - points[0][d]).abs() < 1e-12);
        }
    }

    /// Exhaustive 2-partition oracle on a small point set: enumerate every
    /// two-way split, compute cluster means and total within-cluster squared
    /// error, and take the best.
    fn best_two_partition(points: &[[f64; 2]]) -> (Vec<[f64; 2]>, f64) {
        let n = points.len();
        let mut best = (Vec::new(), f64::INFINITY);
        for mask in 1..(1u32 << n) - 1 {
            let mut means = [[0.0f64; 2]; 2];
            let mut counts = [0usize; 2];
            for (i, p) in points.iter().enumerate() {
                let side = ((mask >> i) & 1) as usize;
                counts[side] += 1;
                means[side][0] += p[0];
                means[side][1] += p[1];
            }
            if counts[0] == 0 || counts[1] == 0 {
                continue;
            }
            for s in 0..2 {
                means[s][0] /= counts[s] as f64;
                means[s][1] /= counts[s] as f64;
            }
            let sse: f64 = points
                .iter()
                .enumerate()
                .map(|(i, p)| dist_sq(p, &means[((mask >> i) & 1) as usize]))
                .sum();
            if sse < best.1 {
                best = (means.to_vec(), sse);
            }
        }
        best
    }

    #[test]
    fn two_separated_clouds_match_partition_oracle() {
        let mut points: Vec<[f64; 2]> = Vec::new();
        for i in 0..6 {
            points.push([0.0 + 0.01 * i as f64, 0.0]);
        }
        for i in 0..6 {
            points.push([5.0 + 0.01 * i as f64, 5.0]);
        }
        let got = run(&points, &KMeansOptions { k: 2, max_iters: 100, tol: 1e-10, spherical: false }, 1);
        let (want, _) = best_two_partition(&points);
        // match centroids up to ordering
        let mut got_sorted = got.clone();
        got_sorted.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let mut want_sorted = want.clone();
        want_sorted.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        for (g, w) in got_sorted.iter().zip(&want_sorted) {
            assert!((g[0] - w[0]).abs() < 1e-9);
            assert!((g[1] - w[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let points: Vec<[f64; 3]> = (0..200)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let opts = KMeansOptions { k: 8, max_iters: 100, tol: 1e-8, spherical: false };
        assert_eq!(run(&points, &opts, 7), run(&points, &opts, 7));
    }

    #[test]
    fn spherical_centroids_are_unit_norm() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let points: Vec<[f64; 4]> = (0..100)
            .map(|_| {
                let mut p = [
                    rng.gen_range(0.2..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                renormalize(&mut p);
                p
            })
            .collect();
        let cs = run(&points, &KMeansOptions { k: 5, max_iters: 100, tol: 1e-10, spherical: true }, 3);
        for c in cs {
            let norm: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
