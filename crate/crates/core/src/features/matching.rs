use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{Feature, Match, MatchSet};

fn descriptor_matrix(feats: &[Feature], dim: usize) -> DMatrix<f32> {
    DMatrix::from_fn(feats.len(), dim, |r, c| feats[r].descriptor[c])
}

/// Mutual nearest neighbours under Euclidean descriptor distance, with a
/// ratio test on the `i -> j` direction. Ties resolve to the lower index.
pub fn match_pair(image_i: u32, feats_i: &[Feature], image_j: u32, feats_j: &[Feature], ratio: f64) -> MatchSet {
    if feats_i.is_empty() || feats_j.is_empty() {
        return MatchSet::new(image_i, image_j, Vec::new());
    }
    let dim = feats_i[0].descriptor.len();
    assert!(feats_i.iter().chain(feats_j).all(|f| f.descriptor.len() == dim), "descriptor lengths differ");
    let a = descriptor_matrix(feats_i, dim);
    let b = descriptor_matrix(feats_j, dim);
    let dots = &a * b.transpose();
    let sq_i: Vec<f32> = feats_i.iter().map(|f| f.descriptor.iter().map(|x| x * x).sum()).collect();
    let sq_j: Vec<f32> = feats_j.iter().map(|f| f.descriptor.iter().map(|x| x * x).sum()).collect();
    let dist2 = |r: usize, c: usize| (sq_i[r] + sq_j[c] - 2.0 * dots[(r, c)]).max(0.0);

    let (ni, nj) = (feats_i.len(), feats_j.len());
    // best and second best of each row
    let mut row_best = vec![(usize::MAX, f32::INFINITY, f32::INFINITY); ni];
    for r in 0..ni {
        let (mut bi, mut b1, mut b2) = (usize::MAX, f32::INFINITY, f32::INFINITY);
        for c in 0..nj {
            let d = dist2(r, c);
            if d < b1 {
                b2 = b1;
                b1 = d;
                bi = c;
            } else if d < b2 {
                b2 = d;
            }
        }
        row_best[r] = (bi, b1, b2);
    }
    let mut col_best = vec![(usize::MAX, f32::INFINITY); nj];
    for c in 0..nj {
        for r in 0..ni {
            let d = dist2(r, c);
            if d < col_best[c].1 {
                col_best[c] = (r, d);
            }
        }
    }
    let ratio_sq = (ratio * ratio) as f32;
    let mut matches = Vec::new();
    for (r, &(c, d1, d2)) in row_best.iter().enumerate() {
        if c == usize::MAX || col_best[c].0 != r {
            continue;
        }
        if d2.is_finite() && !(d1 < ratio_sq * d2) {
            continue;
        }
        matches.push(Match { i: r, j: c, distance: (d1 as f64).sqrt() });
    }
    MatchSet::new(image_i, image_j, matches)
}

/// Match every unordered image pair `(i, j)`, `i < j`. Output order is
/// lexicographic in the pair regardless of scheduling.
pub fn match_all_pairs(features: &[(u32, Vec<Feature>)], ratio: f64) -> Vec<MatchSet> {
    let pairs: Vec<(usize, usize)> =
        (0..features.len()).flat_map(|a| (a + 1..features.len()).map(move |b| (a, b))).collect();
    pairs
        .par_iter()
        .map(|&(a, b)| match_pair(features[a].0, &features[a].1, features[b].0, &features[b].1, ratio))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ClassId;
    use nalgebra::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feature(index: usize, descriptor: Vec<f32>) -> Feature {
        Feature { index, pixel: Point2::new(0.0, 0.0), descriptor, label: ClassId::GROUND, response: 1.0 }
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Vec<Feature> {
        (0..n)
            .map(|k| {
                let mut d: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = d.iter().map(|x| x * x).sum::<f32>().sqrt();
                d.iter_mut().for_each(|x| *x /= norm);
                feature(k, d)
            })
            .collect()
    }

    fn brute_force(fi: &[Feature], fj: &[Feature], ratio: f64) -> Vec<(usize, usize)> {
        let dist = |a: &Feature, b: &Feature| {
            a.descriptor.iter().zip(&b.descriptor).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
        };
        let nn = |a: &Feature, set: &[Feature]| -> (usize, f64, f64) {
            let mut ds: Vec<(f64, usize)> = set.iter().enumerate().map(|(k, b)| (dist(a, b), k)).collect();
            ds.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            (ds[0].1, ds[0].0, ds.get(1).map_or(f64::INFINITY, |d| d.0))
        };
        let mut out = Vec::new();
        for (a, f) in fi.iter().enumerate() {
            let (b, d1, d2) = nn(f, fj);
            let (back, _, _) = nn(&fj[b], fi);
            if back == a && (d2.is_infinite() || d1 < ratio * d2) {
                out.push((a, b));
            }
        }
        out
    }

    #[test]
    fn identical_sets_match_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_features(&mut rng, 50);
        let ms = match_pair(0, &f, 1, &f, 0.8);
        assert_eq!(ms.len(), 50);
        for (k, m) in ms.matches.iter().enumerate() {
            assert_eq!((m.i, m.j), (k, k));
            assert!(m.distance < 1e-3);
        }
    }

    #[test]
    fn non_mutual_neighbour_is_rejected() {
        // A -> B, but B's nearest in the first set is C.
        let a = feature(0, vec![0.0, 0.0]);
        let c = feature(1, vec![1.9, 0.0]);
        let b = feature(0, vec![2.0, 0.0]);
        let ms = match_pair(0, &[a, c], 1, &[b], 1.0);
        assert_eq!(ms.matches.iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), vec![(1, 0)]);
    }

    #[test]
    fn agrees_with_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let fi = random_features(&mut rng, 200);
            let mut fj = random_features(&mut rng, 200);
            // plant some near-duplicates so that matches exist
            for k in 0..60 {
                let mut d = fi[k].descriptor.clone();
                d.iter_mut().for_each(|x| *x += rng.random_range(-0.05..0.05));
                fj[k * 3].descriptor = d;
            }
            let got: Vec<_> = match_pair(0, &fi, 1, &fj, 0.8).matches.iter().map(|m| (m.i, m.j)).collect();
            assert_eq!(got, brute_force(&fi, &fj, 0.8));
        }
    }

    #[test]
    fn all_pairs_in_lexicographic_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sets: Vec<_> = (0..4).map(|k| (k as u32 * 10, random_features(&mut rng, 20))).collect();
        let out = match_all_pairs(&sets, 0.8);
        let pairs: Vec<_> = out.iter().map(|m| (m.image_i, m.image_j)).collect();
        assert_eq!(pairs, vec![(0, 10), (0, 20), (0, 30), (10, 20), (10, 30), (20, 30)]);
    }
}
