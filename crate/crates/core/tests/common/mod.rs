//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rallyscope::court::{BoundingBox, Correspondence};
use rallyscope::dataset::{save_dataset, BallLabel, LabeledBox, MatchDataset, VideoMeta};
use rallyscope::decoder::BinaryMap;
use rallyscope::heatmap::{generate_heatmap, Heatmap, HeatmapSpec};
use rallyscope::pose::{Keypoint, Skeleton};
use rallyscope::rally::{BallType, Rally, Stroke};
use rallyscope::types::{PixelPoint, Player};

/// Double-double arithmetic (about 106 bits of mantissa).
pub mod dd {
    use std::ops::{Add, Div, Mul, Neg, Sub};

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct DD {
        pub hi: f64,
        pub lo: f64,
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick_two_sum(a: f64, b: f64) -> DD {
        let s = a + b;
        DD { hi: s, lo: b - (s - a) }
    }

    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    pub const LN2: DD = DD {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    impl DD {
        pub fn from(v: f64) -> DD {
            DD { hi: v, lo: 0.0 }
        }

        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }

        pub fn ldexp(self, e: i32) -> DD {
            let s = 2f64.powi(e);
            DD { hi: self.hi * s, lo: self.lo * s }
        }

        pub fn floor(self) -> f64 {
            let f = self.hi.floor();
            if f == self.hi {
                // hi is integral; the low word decides.
                f + self.lo.floor()
            } else {
                f
            }
        }

        /// exp via ln 2 range reduction, a Taylor series on r/1024 and ten
        /// squarings.
        pub fn exp(self) -> DD {
            if self.hi < -700.0 {
                return DD::from(0.0);
            }
            let k = (self.hi / LN2.hi).round();
            let r = self - LN2 * DD::from(k);
            let s = r.ldexp(-10);
            let mut term = DD::from(1.0);
            let mut sum = DD::from(1.0);
            for n in 1..=24 {
                term = term * s / DD::from(n as f64);
                sum = sum + term;
                if term.hi.abs() < 1e-36 {
                    break;
                }
            }
            for _ in 0..10 {
                sum = sum * sum;
            }
            sum.ldexp(k as i32)
        }
    }

    impl Add for DD {
        type Output = DD;
        fn add(self, o: DD) -> DD {
            let (s, e) = two_sum(self.hi, o.hi);
            let (t, f) = two_sum(self.lo, o.lo);
            let e = e + t;
            let r = quick_two_sum(s, e);
            quick_two_sum(r.hi, r.lo + f)
        }
    }

    impl Neg for DD {
        type Output = DD;
        fn neg(self) -> DD {
            DD { hi: -self.hi, lo: -self.lo }
        }
    }

    impl Sub for DD {
        type Output = DD;
        fn sub(self, o: DD) -> DD {
            self + (-o)
        }
    }

    impl Mul for DD {
        type Output = DD;
        fn mul(self, o: DD) -> DD {
            let (p, e) = two_prod(self.hi, o.hi);
            quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
        }
    }

    impl Div for DD {
        type Output = DD;
        fn div(self, o: DD) -> DD {
            let q1 = self.hi / o.hi;
            let r = self - o * DD::from(q1);
            let q2 = r.hi / o.hi;
            let r = r - o * DD::from(q2);
            let q3 = r.hi / o.hi;
            quick_two_sum(q1, q2) + DD::from(q3)
        }
    }
}

use dd::DD;

/// `floor(amplitude · exp(−((x−x0)² + (y−y0)²) / (2σ²)))` in double-double.
pub fn oracle_gaussian(x: usize, y: usize, x0: f64, y0: f64, variance: f64, amplitude: u8) -> u8 {
    let dx = DD::from(x as f64) - DD::from(x0);
    let dy = DD::from(y as f64) - DD::from(y0);
    let r2 = dx * dx + dy * dy;
    let a = r2 / (DD::from(2.0) * DD::from(variance));
    // amplitude·e^{-a} < 1 once a > ln(amplitude) + 1; skip the series there.
    if a.hi > (amplitude as f64).ln() + 1.0 {
        return 0;
    }
    let v = DD::from(amplitude as f64) * (-a).exp();
    v.floor() as u8
}

/// Unreduced scaled density: `(1/2πσ²)·e^{−r²/2σ²} · (2πσ²·amplitude)`.
pub fn oracle_gaussian_unreduced(x: usize, y: usize, x0: f64, y0: f64, variance: f64, amplitude: u8) -> u8 {
    let dx = DD::from(x as f64) - DD::from(x0);
    let dy = DD::from(y as f64) - DD::from(y0);
    let r2 = dx * dx + dy * dy;
    let a = r2 / (DD::from(2.0) * DD::from(variance));
    if a.hi > (amplitude as f64).ln() + 1.0 {
        return 0;
    }
    let pi = DD { hi: std::f64::consts::PI, lo: 1.224_646_799_147_353_2e-16 };
    let norm = DD::from(2.0) * pi * DD::from(variance);
    let v = (DD::from(1.0) / norm) * (-a).exp() * (norm * DD::from(amplitude as f64));
    // The reduction is exact in real arithmetic; a result within 1e-25 of
    // an integer is treated as that integer.
    let n = (v.hi + 0.5).floor();
    if (v - DD::from(n)).to_f64().abs() < 1e-25 {
        n as u8
    } else {
        v.floor() as u8
    }
}

/// Softmax of one pixel's scores with double-double exponentials.
pub fn oracle_softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<DD> = scores.iter().map(|&s| (DD::from(s) - DD::from(m)).exp()).collect();
    let total = e.iter().fold(DD::from(0.0), |a, &b| a + b);
    e.iter().map(|&v| (v / total).to_f64()).collect()
}

/// `−Σ_{i,j} Σ_k Q(i,j,k) · ln max(P(i,j,k), ε)` by explicit double loop
/// over pixels and all 256 bins.
pub fn oracle_cross_entropy(
    width: usize,
    height: usize,
    prob: impl Fn(usize, usize, usize) -> f64,
    truth: impl Fn(usize, usize) -> u8,
    eps: f64,
) -> f64 {
    let mut total = 0.0;
    for y in 0..height {
        for x in 0..width {
            for k in 0..256 {
                let q = if truth(x, y) as usize == k { 1.0 } else { 0.0 };
                if q != 0.0 {
                    total -= q * prob(x, y, k).max(eps).ln();
                }
            }
        }
    }
    total
}

/// Filled disk of pixels whose centres lie within `r` of `(cx, cy)`.
pub fn rasterize_disk(map: &mut [u8], width: usize, cx: f64, cy: f64, r: f64) {
    let height = map.len() / width;
    for y in 0..height {
        for x in 0..width {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                map[y * width + x] = 255;
            }
        }
    }
}

pub fn disk_map(width: usize, height: usize, disks: &[(f64, f64, f64)]) -> BinaryMap {
    let mut values = vec![0u8; width * height];
    for &(cx, cy, r) in disks {
        rasterize_disk(&mut values, width, cx, cy, r);
    }
    BinaryMap::from_values(width, height, values).unwrap()
}

/// Applies a row-major 3×3 matrix to `(x, y, 1)` and divides.
pub fn apply_row_major(m: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let u = m[0] * x + m[1] * y + m[2];
    let v = m[3] * x + m[4] * y + m[5];
    let w = m[6] * x + m[7] * y + m[8];
    (u / w, v / w)
}

pub fn invert_row_major(m: &[f64; 9]) -> [f64; 9] {
    let [a, b, c, d, e, f, g, h, i] = *m;
    let det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    [
        (e * i - f * h) / det,
        (c * h - b * i) / det,
        (b * f - c * e) / det,
        (f * g - d * i) / det,
        (a * i - c * g) / det,
        (c * d - a * f) / det,
        (d * h - e * g) / det,
        (b * g - a * h) / det,
        (a * e - b * d) / det,
    ]
}

/// A broadcast-like court-to-image map: scale, rotation, translation and a
/// mild perspective tilt, all randomised.
pub fn random_court_to_image<R: Rng>(rng: &mut R) -> [f64; 9] {
    let s = rng.gen_range(20.0..40.0);
    let theta: f64 = rng.gen_range(-0.3..0.3);
    let (sin, cos) = theta.sin_cos();
    let tx = rng.gen_range(150.0..350.0);
    let ty = rng.gen_range(50.0..150.0);
    let p0 = rng.gen_range(-0.01..0.01);
    let p1 = rng.gen_range(-0.04..0.0);
    [s * cos, -s * sin, tx, s * sin, s * cos, ty, p0, p1, 1.0]
}

pub fn random_ball_type<R: Rng>(rng: &mut R) -> BallType {
    BallType::ALL[rng.gen_range(0..7)]
}

/// A valid match: disjoint ordered rallies, alternating strokes inside each.
pub fn random_match<R: Rng>(rng: &mut R, rallies: usize, vocab: &[String]) -> Vec<Rally> {
    let mut out = Vec::new();
    let mut frame = rng.gen_range(0..50u64);
    for i in 0..rallies {
        let start = frame;
        let n = rng.gen_range(0..15usize);
        let mut strokes = Vec::new();
        let mut player = if rng.gen_bool(0.5) { Player::Top } else { Player::Bottom };
        let mut f = start;
        for _ in 0..n {
            f += rng.gen_range(1..40u64);
            strokes.push(Stroke {
                hit_frame: f,
                player,
                ball_type: random_ball_type(rng),
            });
            player = player.opponent();
        }
        let end = f + rng.gen_range(0..30u64);
        out.push(Rally {
            rally_id: i as u64 + 1,
            start_frame: start,
            end_frame: end,
            strokes,
            winner: if rng.gen_bool(0.5) { Player::Top } else { Player::Bottom },
            loss_reason: vocab[rng.gen_range(0..vocab.len())].clone(),
        });
        frame = end + rng.gen_range(1..100u64);
    }
    out
}

/// Ball-type counts by scanning every stroke with string comparisons.
pub fn tally_ball_types(rallies: &[Rally], player: Option<Player>) -> [u64; 7] {
    let names = ["cut", "drive", "lob", "long", "netplay", "rush", "smash"];
    let mut counts = [0u64; 7];
    for r in rallies {
        for s in &r.strokes {
            if player.is_some_and(|p| p != s.player) {
                continue;
            }
            let name = format!("{:?}", s.ball_type).to_lowercase();
            let idx = names.iter().position(|n| *n == name).unwrap();
            counts[idx] += 1;
        }
    }
    counts
}

/// Triangle wave in y with constant x speed; returns samples and the
/// construction's reversal frames.
pub fn triangle_wave(frames: u64, half_periods: &[u64], amplitude: f64) -> (Vec<(u64, f64, f64)>, Vec<u64>) {
    let mut reversals = Vec::new();
    let mut acc = 0;
    for &hp in half_periods {
        acc += hp;
        if acc < frames - 1 {
            reversals.push(acc);
        }
    }
    let mut samples = Vec::new();
    let mut y = 0.0;
    let mut dir = 1.0;
    let mut seg = 0;
    for f in 0..frames {
        if f > 0 {
            y += dir * amplitude / half_periods[seg.min(half_periods.len() - 1)] as f64;
        }
        if seg < reversals.len() && f == reversals[seg] {
            dir = -dir;
            seg += 1;
        }
        samples.push((f, 100.0 + 2.0 * f as f64, 240.0 + y));
    }
    (samples, reversals)
}

pub fn pose_template(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..15).map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.05..0.95)]).collect()
}

pub fn skeleton_in_box(frame: u64, rel: &[[f64; 2]], b: &BoundingBox) -> Skeleton {
    Skeleton {
        frame,
        player_slot: Player::Bottom,
        keypoints: rel.iter().map(|p| Keypoint::visible(b.x + p[0] * b.w, b.y + p[1] * b.h)).collect(),
        racket: None,
    }
}

/// Writes a complete match directory, 1280x720 with 90 labelled frames, plus
/// a `heatmaps/` folder with one working-resolution PGM per frame (every
/// 17th blank), so every pipeline stage has input.
pub fn write_sample_match(root: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = MatchDataset::new(VideoMeta::new([1280, 720], 30.0));
    let court_to_image = random_court_to_image(&mut rng);
    let (sx, sy) = ds.working_scale();
    for c in [[0.0, 0.0], [6.1, 0.0], [6.1, 13.4], [0.0, 13.4], [3.05, 6.7], [0.46, 1.98]] {
        let (u, v) = apply_row_major(&court_to_image, c[0], c[1]);
        ds.calibration.push(Correspondence { px: [u / sx, v / sy], court: c });
    }
    let template: Vec<[f64; 2]> = pose_template(&mut rng);
    let heat_dir = root.join("heatmaps");
    fs::create_dir_all(&heat_dir).unwrap();
    let spec = HeatmapSpec::default();
    let (samples, _) = triangle_wave(90, &[15, 20, 18, 25], 120.0);
    for &(f, x, y) in &samples {
        let frame = ds.frame_mut(f);
        frame.ball = Some(BallLabel::Visible(PixelPoint::new(x / sx, y / sy)));
        let hm = if f % 17 == 5 {
            Heatmap::zeros(640, 480).unwrap()
        } else {
            generate_heatmap(PixelPoint::new(x, y), &spec).unwrap()
        };
        let mut file = fs::File::create(heat_dir.join(format!("frame_{f:06}.pgm"))).unwrap();
        hm.write_pgm(&mut file).unwrap();
        for slot in Player::ALL {
            let b = BoundingBox::with_meta(
                rng.gen_range(200.0..900.0),
                rng.gen_range(100.0..500.0),
                rng.gen_range(60.0..120.0),
                rng.gen_range(150.0..250.0),
                rng.gen_range(0.5..1.0),
                f,
            )
            .unwrap();
            frame.boxes.push(LabeledBox { player_slot: Some(slot), bbox: b });
            let rel: Vec<[f64; 2]> = template
                .iter()
                .map(|p| [p[0] + rng.gen_range(-0.03..0.03), p[1] + rng.gen_range(-0.03..0.03)])
                .collect();
            let mut s = skeleton_in_box(f, &rel, &b);
            s.player_slot = slot;
            frame.skeletons.push(s);
        }
        frame.boxes.push(LabeledBox {
            player_slot: None,
            bbox: BoundingBox::with_meta(5.0, 5.0, 40.0, 80.0, 0.3, f).unwrap(),
        });
    }
    ds.rallies = random_match(&mut rng, 4, &ds.meta.loss_reasons.clone())
        .into_iter()
        .map(|mut r: Rally| {
            r.strokes.retain(|s| s.hit_frame < 90);
            r
        })
        .filter(|r| r.end_frame < 90)
        .collect();
    let hit_frames: Vec<u64> = ds.rallies.iter().flat_map(|r| r.strokes.iter().map(|s| s.hit_frame)).collect();
    for f in hit_frames {
        ds.frame_mut(f);
    }
    save_dataset(&ds, root).unwrap();
}
