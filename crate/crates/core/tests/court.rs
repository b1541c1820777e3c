mod common;

use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rallyscope::court::*;
use rallyscope::types::{PixelPoint, Player};

use common::{apply_row_major, invert_row_major, random_court_to_image};

fn corners() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [6.1, 0.0], [6.1, 13.4], [0.0, 13.4]]
}

fn through(court_to_image: &[f64; 9], court: &[[f64; 2]]) -> Vec<Correspondence> {
    court
        .iter()
        .map(|&c| {
            let (u, v) = apply_row_major(court_to_image, c[0], c[1]);
            Correspondence { px: [u, v], court: c }
        })
        .collect()
}

fn assert_maps(h: &Homography, pairs: &[Correspondence], tol: f64) {
    for c in pairs {
        let p = project_point(h, PixelPoint::new(c.px[0], c.px[1])).unwrap();
        assert!((p.x - c.court[0]).abs() <= tol && (p.y - c.court[1]).abs() <= tol, "{c:?} -> {p:?}");
    }
}

#[test]
fn identity_correspondences_give_identity() {
    let pairs: Vec<Correspondence> = corners().into_iter().map(|c| Correspondence { px: c, court: c }).collect();
    let fit = estimate_homography(&pairs).unwrap();
    let m = fit.homography.to_row_major();
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for (a, b) in m.iter().zip(id) {
        assert!((a - b).abs() < 1e-12, "{m:?}");
    }
    assert!(fit.warning.is_none());
}

#[test]
fn scaling_correspondences_give_half_scale() {
    let pairs: Vec<Correspondence> = corners()
        .into_iter()
        .map(|c| Correspondence { px: [2.0 * c[0], 2.0 * c[1]], court: c })
        .collect();
    let m = estimate_homography(&pairs).unwrap().homography.to_row_major();
    let want = [0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0];
    for (a, b) in m.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{m:?}");
    }
}

#[test]
fn noisy_six_point_fit_within_a_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = random_court_to_image(&mut rng);
    let court: Vec<[f64; 2]> = vec![[0.0, 0.0], [6.1, 0.0], [6.1, 13.4], [0.0, 13.4], [3.05, 4.72], [0.46, 8.68]];
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut pairs = through(&truth, &court);
    for p in &mut pairs {
        p.px[0] += noise.sample(&mut rng);
        p.px[1] += noise.sample(&mut rng);
    }
    let fit = estimate_homography(&pairs).unwrap();
    let inv = invert_row_major(&fit.homography.to_row_major());
    let mean: f64 = court
        .iter()
        .map(|c| {
            let (u, v) = apply_row_major(&inv, c[0], c[1]);
            let (tu, tv) = apply_row_major(&truth, c[0], c[1]);
            (u - tu).hypot(v - tv)
        })
        .sum::<f64>()
        / court.len() as f64;
    assert!(mean <= 1.0, "mean {mean}");
    assert!(fit.rms_error.is_finite());
}

#[test]
fn degenerate_inputs_rejected() {
    assert!(estimate_homography(&through(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &corners()[..3])).is_err());
    let collinear: Vec<Correspondence> = (0..5)
        .map(|i| Correspondence { px: [i as f64, 2.0 * i as f64], court: [i as f64, i as f64] })
        .collect();
    assert!(estimate_homography(&collinear).is_err());
    let same = vec![Correspondence { px: [1.0, 1.0], court: [1.0, 1.0] }; 4];
    assert!(estimate_homography(&same).is_err());
}

#[test]
fn homography_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = Homography::from_row_major(&invert_row_major(&random_court_to_image(&mut rng))).unwrap();
    assert_eq!(Homography::from_json(&h.to_json()).unwrap(), h);
    assert!(Homography::from_matrix(Matrix3::zeros()).is_err());
}

#[test]
fn ground_point_and_enlargement_examples() {
    let b = BoundingBox::new(100.0, 100.0, 40.0, 80.0).unwrap();
    assert_eq!(ground_point(&b), PixelPoint::new(120.0, 180.0));
    let e = enlarge_box(&b, 1.5, 640.0, 480.0).unwrap();
    assert_eq!((e.x, e.y, e.w, e.h), (90.0, 80.0, 60.0, 120.0));
    let clipped = enlarge_box(&BoundingBox::new(0.0, 0.0, 20.0, 20.0).unwrap(), 2.0, 640.0, 480.0).unwrap();
    assert_eq!((clipped.x, clipped.y, clipped.w, clipped.h), (0.0, 0.0, 30.0, 30.0));
    assert!(enlarge_box(&b, 0.5, 640.0, 480.0).is_err());
    assert!(BoundingBox::new(0.0, 0.0, -1.0, 5.0).is_err());
}

#[test]
fn filter_keeps_inside_and_drops_outside() {
    let h = Homography::identity();
    let court = CourtModel::default();
    // Ground points (3, 6) and (8, 6).
    let inside = BoundingBox::new(2.0, 4.0, 2.0, 2.0).unwrap();
    let outside = BoundingBox::new(7.0, 4.0, 2.0, 2.0).unwrap();
    let kept = filter_players(&[inside, outside], &h, &court);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].bbox, inside);
    assert_eq!(kept[0].court, CourtPoint::new(3.0, 6.0));
    let singles = CourtModel { boundary: CourtBoundary::Singles, ..CourtModel::default() };
    assert!(!singles.contains(CourtPoint::new(0.2, 6.0)));
    assert!(court.contains(CourtPoint::new(0.2, 6.0)));
    assert_eq!(court.side_of(CourtPoint::new(3.0, 2.0)), Player::Bottom);
    assert_eq!(court.side_of(CourtPoint::new(3.0, 10.0)), Player::Top);
}

#[test]
fn points_at_infinity_are_dropped() {
    // w = x - 5 vanishes on the ground point (5, 0).
    let h = Homography::from_row_major(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -5.0]).unwrap();
    assert!(project_point(&h, PixelPoint::new(5.0, 0.0)).is_err());
    let b = BoundingBox::new(4.0, -2.0, 2.0, 2.0).unwrap();
    assert!(filter_players(&[b], &h, &CourtModel::default()).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_four_point_recovery(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_court_to_image(&mut rng);
        let pairs = through(&truth, &corners());
        let fit = estimate_homography(&pairs).unwrap();
        assert_maps(&fit.homography, &pairs, 1e-9);
    }

    #[test]
    fn correspondence_order_does_not_matter(seed in any::<u64>(), rotate in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_court_to_image(&mut rng);
        let court: Vec<[f64; 2]> = (0..6).map(|_| [rng.gen_range(0.0..6.1), rng.gen_range(0.0..13.4)]).collect();
        let mut pairs = through(&truth, &court);
        for p in &mut pairs {
            p.px[0] += rng.gen_range(-0.5..0.5);
            p.px[1] += rng.gen_range(-0.5..0.5);
        }
        let a = estimate_homography(&pairs).unwrap().homography.to_row_major();
        pairs.rotate_left(rotate);
        pairs.swap(0, 1);
        let b = estimate_homography(&pairs).unwrap().homography.to_row_major();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn larger_margin_keeps_a_superset(seed in any::<u64>(), m1 in 0.0f64..1.0, extra in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Homography::from_row_major(&invert_row_major(&random_court_to_image(&mut rng))).unwrap();
        let boxes: Vec<BoundingBox> = (0..200)
            .map(|i| BoundingBox::with_meta(
                rng.gen_range(0.0..600.0), rng.gen_range(0.0..440.0),
                rng.gen_range(5.0..80.0), rng.gen_range(10.0..150.0), 1.0, i,
            ).unwrap())
            .collect();
        let narrow = CourtModel { margin: m1, ..CourtModel::default() };
        let wide = CourtModel { margin: m1 + extra, ..CourtModel::default() };
        let a: Vec<u64> = filter_players(&boxes, &h, &narrow).iter().map(|p| p.bbox.source_frame).collect();
        let b: Vec<u64> = filter_players(&boxes, &h, &wide).iter().map(|p| p.bbox.source_frame).collect();
        prop_assert!(a.iter().all(|f| b.contains(f)));
    }
}
