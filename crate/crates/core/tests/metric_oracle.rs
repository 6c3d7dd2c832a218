//! Fast metrics against an O(n²) brute-force oracle written from the
//! definitions, plus metric invariants as properties.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xr23d::metrics::{dice, evaluate_pair, surface_distances, DegenerateFlag};
use xr23d::volume::{BinaryMask, Geometry};

struct Oracle {
    dsc: f64,
    gt_to_pred: Vec<f64>,
    pred_to_gt: Vec<f64>,
}

fn on(mask: &[u8], dims: [usize; 3], x: i64, y: i64, z: i64) -> bool {
    if x < 0 || y < 0 || z < 0 || x >= dims[0] as i64 || y >= dims[1] as i64 || z >= dims[2] as i64 {
        return false;
    }
    mask[x as usize + dims[0] * (y as usize + dims[1] * z as usize)] != 0
}

fn surface(mask: &[u8], dims: [usize; 3]) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for z in 0..dims[2] as i64 {
        for y in 0..dims[1] as i64 {
            for x in 0..dims[0] as i64 {
                if !on(mask, dims, x, y, z) {
                    continue;
                }
                let exposed = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                    .iter()
                    .any(|(dx, dy, dz)| !on(mask, dims, x + dx, y + dy, z + dz));
                if exposed {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn nearest(from: &[[i64; 3]], to: &[[i64; 3]], s: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    let d: [f64; 3] = std::array::from_fn(|k| (a[k] - b[k]) as f64 * s[k]);
                    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn oracle(gt: &[u8], pred: &[u8], dims: [usize; 3], s: [f64; 3]) -> Oracle {
    let a = gt.iter().filter(|&&v| v != 0).count();
    let b = pred.iter().filter(|&&v| v != 0).count();
    let both = gt.iter().zip(pred).filter(|(x, y)| **x != 0 && **y != 0).count();
    let (sg, sp) = (surface(gt, dims), surface(pred, dims));
    Oracle { dsc: 2.0 * both as f64 / (a + b) as f64, gt_to_pred: nearest(&sg, &sp, s), pred_to_gt: nearest(&sp, &sg, s) }
}

fn pct95(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = 0.95 * (v.len() as f64 - 1.0);
    let below = rank.floor() as usize;
    let above = rank.ceil() as usize;
    v[below] + (rank - below as f64) * (v[above] - v[below])
}

fn random_pair(rng: &mut ChaCha8Rng) -> ([usize; 3], [f64; 3], Vec<u8>, Vec<u8>) {
    const SPACINGS: [f64; 6] = [1.0, 0.5, 2.0, 0.8, 1.3, 2.5];
    let dims: [usize; 3] = std::array::from_fn(|_| rng.random_range(2..=16));
    let spacing: [f64; 3] = std::array::from_fn(|_| SPACINGS[rng.random_range(0..SPACINGS.len())]);
    let n = dims.iter().product();
    let mut blob = |density: f64| {
        let c: [f64; 3] = std::array::from_fn(|k| rng.random_range(0.0..dims[k] as f64));
        let r = rng.random_range(1.0..6.0);
        let mut m: Vec<u8> = (0..n)
            .map(|i| {
                let p = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
                let d2: f64 = (0..3).map(|k| (p[k] as f64 - c[k]).powi(2)).sum();
                u8::from(d2 <= r * r)
            })
            .collect();
        for v in m.iter_mut() {
            if rng.random_bool(density) {
                *v ^= 1;
            }
        }
        if m.iter().all(|&v| v == 0) {
            m[rng.random_range(0..n)] = 1;
        }
        m
    };
    let gt = blob(0.05);
    let pred = blob(0.1);
    (dims, spacing, gt, pred)
}

#[test]
fn hundred_random_pairs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let (dims, spacing, gt, pred) = random_pair(&mut rng);
        let g = Geometry::new(dims, spacing).unwrap();
        let (gm, pm) = (BinaryMask::new(g.clone(), gt.clone()).unwrap(), BinaryMask::new(g, pred.clone()).unwrap());
        let rec = evaluate_pair(&gm, &pm, 1.5).unwrap();
        let o = oracle(&gt, &pred, dims, spacing);
        let pooled: Vec<f64> = o.gt_to_pred.iter().chain(&o.pred_to_gt).copied().collect();
        let asd = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let hd = pct95(&o.gt_to_pred).max(pct95(&o.pred_to_gt));
        let nsd = pooled.iter().filter(|&&d| d <= 1.5).count() as f64 / pooled.len() as f64;
        let ctx = format!("trial {trial} dims {dims:?} spacing {spacing:?}");
        assert!((rec.dsc - o.dsc).abs() < 1e-9, "{ctx}");
        assert!((rec.hd95 - hd).abs() < 1e-9, "{ctx}: {} vs {hd}", rec.hd95);
        assert!((rec.asd - asd).abs() < 1e-9, "{ctx}");
        assert!((rec.nsd - nsd).abs() < 1e-9, "{ctx}");
        assert_eq!(rec.degenerate_flag, DegenerateFlag::None);
    }
}

#[test]
fn surface_lists_equal_oracle_exactly_on_dyadic_spacing() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let (dims, _, gt, pred) = random_pair(&mut rng);
        let spacing = [1.0, 0.5, 2.0];
        let g = Geometry::new(dims, spacing).unwrap();
        let d = surface_distances(&BinaryMask::new(g.clone(), gt.clone()).unwrap(), &BinaryMask::new(g, pred.clone()).unwrap())
            .unwrap();
        let o = oracle(&gt, &pred, dims, spacing);
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(sorted(&d.gt_to_pred), sorted(&o.gt_to_pred));
        assert_eq!(sorted(&d.pred_to_gt), sorted(&o.pred_to_gt));
    }
}

fn mask_strategy() -> impl Strategy<Value = ([usize; 3], Vec<u8>, Vec<u8>)> {
    (2usize..9, 2usize..9, 2usize..9).prop_flat_map(|(x, y, z)| {
        let n = x * y * z;
        (Just([x, y, z]), proptest::collection::vec(0u8..2, n), proptest::collection::vec(0u8..2, n))
    })
}

fn non_empty(v: &mut [u8]) {
    if v.iter().all(|&x| x == 0) {
        v[0] = 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_symmetric_and_reflexive((dims, a, b) in mask_strategy()) {
        let g = Geometry::new(dims, [1.0; 3]).unwrap();
        let (ma, mb) = (BinaryMask::new(g.clone(), a).unwrap(), BinaryMask::new(g, b).unwrap());
        prop_assert_eq!(dice(&ma, &mb).unwrap().0, dice(&mb, &ma).unwrap().0);
        prop_assert_eq!(dice(&ma, &ma).unwrap().0, 1.0);
    }

    #[test]
    fn surface_metrics_symmetric((dims, mut a, mut b) in mask_strategy(), sx in 0.3f64..3.0) {
        non_empty(&mut a);
        non_empty(&mut b);
        let g = Geometry::new(dims, [sx, 1.0, 0.7]).unwrap();
        let (ma, mb) = (BinaryMask::new(g.clone(), a).unwrap(), BinaryMask::new(g, b).unwrap());
        let (ab, ba) = (evaluate_pair(&ma, &mb, 1.0).unwrap(), evaluate_pair(&mb, &ma, 1.0).unwrap());
        prop_assert_eq!(ab.hd95, ba.hd95);
        prop_assert!((ab.asd - ba.asd).abs() < 1e-12);
        prop_assert_eq!(ab.nsd, ba.nsd);
        prop_assert!((0.0..=1.0).contains(&ab.dsc) && (0.0..=1.0).contains(&ab.nsd));
    }

    #[test]
    fn spacing_scaling_law((dims, mut a, mut b) in mask_strategy(), k in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 8.0])) {
        non_empty(&mut a);
        non_empty(&mut b);
        let s = [1.0, 0.5, 2.0];
        let g1 = Geometry::new(dims, s).unwrap();
        let g2 = Geometry::new(dims, s.map(|v| v * k)).unwrap();
        let r1 = evaluate_pair(&BinaryMask::new(g1.clone(), a.clone()).unwrap(), &BinaryMask::new(g1, b.clone()).unwrap(), 1.5).unwrap();
        let r2 = evaluate_pair(&BinaryMask::new(g2.clone(), a).unwrap(), &BinaryMask::new(g2, b).unwrap(), 1.5 * k).unwrap();
        prop_assert_eq!(r2.hd95, k * r1.hd95);
        prop_assert_eq!(r2.asd, k * r1.asd);
        prop_assert_eq!(r2.dsc, r1.dsc);
        prop_assert_eq!(r2.nsd, r1.nsd);
    }

    #[test]
    fn empty_prediction_sentinel((dims, mut a, _b) in mask_strategy()) {
        non_empty(&mut a);
        let g = Geometry::new(dims, [1.0, 2.0, 0.5]).unwrap();
        let diag = g.diagonal_mm();
        let r = evaluate_pair(&BinaryMask::new(g.clone(), a).unwrap(), &BinaryMask::empty(g).unwrap(), 1.5).unwrap();
        prop_assert_eq!((r.dsc, r.hd95, r.asd, r.nsd), (0.0, diag, diag, 0.0));
        prop_assert_eq!(r.degenerate_flag, DegenerateFlag::EmptyPred);
    }
}
