use super::{Feature, MatchSet};

/// Default minimum share of label-agreeing matches for the filter to apply.
pub const MIN_INLIER_FRACTION: f64 = 0.15;

/// Drop matches whose endpoints carry different class ids.
///
/// If fewer than `min_inlier_fraction` of the matches agree, the filter is
/// not applied for this pair and the input is returned unchanged with
/// `semantic_filter_applied = false`. Class 0 only agrees with class 0.
pub fn semantic_filter(ms: &MatchSet, feats_i: &[Feature], feats_j: &[Feature], min_inlier_fraction: f64) -> MatchSet {
    if ms.is_empty() {
        return MatchSet { semantic_filter_applied: false, ..ms.clone() };
    }
    let agreeing: Vec<_> = ms.matches.iter().copied().filter(|m| feats_i[m.i].label == feats_j[m.j].label).collect();
    // compare counts rather than a float ratio so that exactly 15% applies
    if (agreeing.len() as f64) >= min_inlier_fraction * ms.len() as f64 - 1e-9 {
        MatchSet { image_i: ms.image_i, image_j: ms.image_j, matches: agreeing, semantic_filter_applied: true }
    } else {
        MatchSet { semantic_filter_applied: false, ..ms.clone() }
    }
}

/// Debug dump: `pair_i,pair_j,idx_i,idx_j,dist,label_i,label_j,kept`, one row
/// per putative match of `before`.
pub fn match_debug_csv(before: &MatchSet, after: &MatchSet, feats_i: &[Feature], feats_j: &[Feature]) -> String {
    let kept: std::collections::HashSet<(usize, usize)> = after.matches.iter().map(|m| (m.i, m.j)).collect();
    let mut out = String::from("pair_i,pair_j,idx_i,idx_j,dist,label_i,label_j,kept\n");
    for m in &before.matches {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{},{},{}\n",
            before.image_i,
            before.image_j,
            m.i,
            m.j,
            m.distance,
            feats_i[m.i].label,
            feats_j[m.j].label,
            kept.contains(&(m.i, m.j)) as u8
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Match;
    use crate::imaging::ClassId;
    use nalgebra::Point2;
    use proptest::prelude::*;

    fn feats(labels: &[u8]) -> Vec<Feature> {
        labels
            .iter()
            .enumerate()
            .map(|(k, &l)| Feature {
                index: k,
                pixel: Point2::origin(),
                descriptor: vec![1.0],
                label: ClassId(l),
                response: 0.0,
            })
            .collect()
    }

    fn identity_matches(n: usize) -> MatchSet {
        MatchSet::new(0, 1, (0..n).map(|k| Match { i: k, j: k, distance: 0.0 }).collect())
    }

    #[test]
    fn drops_disagreeing_pairs() {
        let fi = feats(&[3, 1, 2]);
        let fj = feats(&[3, 3, 2]);
        let out = semantic_filter(&identity_matches(3), &fi, &fj, MIN_INLIER_FRACTION);
        assert!(out.semantic_filter_applied);
        assert_eq!(out.matches.iter().map(|m| m.i).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn falls_back_below_fifteen_percent() {
        let li: Vec<u8> = (0..20).map(|k| if k < 2 { 1 } else { 3 }).collect();
        let lj: Vec<u8> = (0..20).map(|k| if k < 2 { 1 } else { 1 + (k % 2) as u8 * 3 }).collect();
        let ms = identity_matches(20);
        let fi = feats(&li);
        let fj = feats(&lj);
        let agree = (0..20).filter(|&k| li[k] == lj[k]).count();
        assert_eq!(agree, 2);
        let out = semantic_filter(&ms, &fi, &fj, MIN_INLIER_FRACTION);
        assert!(!out.semantic_filter_applied);
        assert_eq!(out.matches, ms.matches);
    }

    #[test]
    fn exactly_fifteen_percent_applies() {
        let li: Vec<u8> = (0..20).map(|k| if k < 3 { 2 } else { 1 }).collect();
        let lj: Vec<u8> = (0..20).map(|k| if k < 3 { 2 } else { 4 }).collect();
        let out = semantic_filter(&identity_matches(20), &feats(&li), &feats(&lj), MIN_INLIER_FRACTION);
        assert!(out.semantic_filter_applied);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn unanimous_is_identity_and_empty_is_unflagged() {
        let f = feats(&[1, 2, 3, 4]);
        let ms = identity_matches(4);
        let out = semantic_filter(&ms, &f, &f, MIN_INLIER_FRACTION);
        assert!(out.semantic_filter_applied);
        assert_eq!(out.matches, ms.matches);
        let out = semantic_filter(&identity_matches(0), &f, &f, MIN_INLIER_FRACTION);
        assert!(!out.semantic_filter_applied && out.is_empty());
    }

    #[test]
    fn unlabeled_only_agrees_with_unlabeled() {
        let fi = feats(&[0, 0, 1]);
        let fj = feats(&[0, 1, 0]);
        let out = semantic_filter(&identity_matches(3), &fi, &fj, MIN_INLIER_FRACTION);
        assert_eq!(out.matches.iter().map(|m| m.i).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn debug_csv_marks_kept_rows() {
        let fi = feats(&[3, 1]);
        let fj = feats(&[3, 3]);
        let ms = identity_matches(2);
        let out = semantic_filter(&ms, &fi, &fj, MIN_INLIER_FRACTION);
        let csv = match_debug_csv(&ms, &out, &fi, &fj);
        let rows: Vec<_> = csv.lines().collect();
        assert_eq!(rows[1], "0,1,0,0,0.000000,3,3,1");
        assert_eq!(rows[2], "0,1,1,1,0.000000,1,3,0");
    }

    proptest! {
        #[test]
        fn subset_idempotent_and_order_free(labels in proptest::collection::vec((0u8..6, 0u8..6), 0..80), rot in 0usize..80) {
            let fi = feats(&labels.iter().map(|p| p.0).collect::<Vec<_>>());
            let fj = feats(&labels.iter().map(|p| p.1).collect::<Vec<_>>());
            let ms = identity_matches(labels.len());
            let once = semantic_filter(&ms, &fi, &fj, MIN_INLIER_FRACTION);
            prop_assert!(once.matches.iter().all(|m| ms.matches.contains(m)));
            if once.semantic_filter_applied {
                prop_assert!(once.matches.iter().all(|m| fi[m.i].label == fj[m.j].label));
            } else {
                prop_assert_eq!(&once.matches, &ms.matches);
            }
            let twice = semantic_filter(&once, &fi, &fj, MIN_INLIER_FRACTION);
            prop_assert_eq!(&twice.matches, &once.matches);

            let mut permuted = ms.clone();
            if !permuted.matches.is_empty() {
                let r = rot % permuted.matches.len();
                permuted.matches.rotate_left(r);
            }
            let p = semantic_filter(&permuted, &fi, &fj, MIN_INLIER_FRACTION);
            let mut a: Vec<_> = once.matches.iter().map(|m| m.i).collect();
            let mut b: Vec<_> = p.matches.iter().map(|m| m.i).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
