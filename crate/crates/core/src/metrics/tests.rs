use super::*;
use alloc::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PERSON: ClassId = 1;
const CAR: ClassId = 2;
const ROAD: ClassId = 4;
const VEG: ClassId = 5;

fn lab(sem: &[ClassId], ins: &[InstanceId]) -> PanopticLabeling {
    PanopticLabeling::new(sem.to_vec(), ins.to_vec()).unwrap()
}

#[test]
fn segment_iou_examples() {
    assert_eq!(segment_iou(&[1, 2, 3], &[3, 2, 1]).unwrap(), 1.0);
    assert_eq!(segment_iou(&[2, 3], &[1, 2]).unwrap(), 1.0 / 3.0);
    assert_eq!(segment_iou(&[1], &[2]).unwrap(), 0.0);
    assert!(segment_iou(&[], &[]).is_err());
}

#[test]
fn hand_example_tp_plus_fp() {
    let cfg = ClassConfig::synthetic();
    let mut gs = vec![1; 10];
    gs.extend([0, 0]);
    let mut ps = vec![1; 6];
    ps.extend([0, 0, 0, 0, 2, 2]);
    let r = panoptic_quality(&[lab(&[CAR; 12], &ps)], &[lab(&[CAR; 12], &gs)], &cfg).unwrap();
    let car = r.class(CAR).unwrap();
    assert_eq!((car.tp, car.fp, car.fn_), (1, 1, 0));
    assert!((car.sq - 0.6).abs() < 1e-12);
    assert!((car.rq - 2.0 / 3.0).abs() < 1e-12);
    assert!((car.pq - 0.4).abs() < 1e-12);
    assert!((r.pq - 0.4).abs() < 1e-12);
    assert_eq!(r.pq_st, 0.0);
}

#[test]
fn iou_of_exactly_half_does_not_match() {
    let cfg = ClassConfig::synthetic();
    let gt = lab(&[CAR; 4], &[1, 1, 1, 1]);
    let pred = lab(&[CAR; 4], &[1, 1, 0, 0]);
    let r = panoptic_quality(&[pred], &[gt], &cfg).unwrap();
    let car = r.class(CAR).unwrap();
    assert_eq!((car.tp, car.fp, car.fn_), (0, 1, 1));
    assert_eq!(car.pq, 0.0);
}

#[test]
fn stuff_is_one_segment_per_frame_and_missing_stuff_is_fn() {
    let cfg = ClassConfig::synthetic();
    let gt = lab(&[ROAD, ROAD, VEG, VEG], &[0, 0, 0, 0]);
    let pred = lab(&[ROAD, ROAD, ROAD, 0], &[3, 4, 0, 0]);
    let r = panoptic_quality(&[pred.clone(), pred], &[gt.clone(), gt], &cfg).unwrap();
    let road = r.class(ROAD).unwrap();
    assert_eq!((road.tp, road.fp, road.fn_), (2, 0, 0));
    assert!((road.sq - 2.0 / 3.0).abs() < 1e-12);
    let veg = r.class(VEG).unwrap();
    assert_eq!((veg.tp, veg.fp, veg.fn_), (0, 0, 2));
    assert_eq!(r.pq_th, 0.0);
    // PQ† swaps stuff PQ for IoU
    assert!((r.pq_dagger - (road.iou + veg.iou) / 2.0).abs() < 1e-12);
}

#[test]
fn ignore_points_are_dropped() {
    let cfg = ClassConfig::synthetic();
    let gt = lab(&[CAR, CAR, 0, 0], &[1, 1, 0, 0]);
    let pred = lab(&[CAR, CAR, CAR, CAR], &[1, 1, 1, 1]);
    let r = panoptic_quality(&[pred], &[gt], &cfg).unwrap();
    assert_eq!(r.pq, 1.0);
    assert_eq!(r.miou, 1.0);
}

#[test]
fn mismatched_lengths_error() {
    let cfg = ClassConfig::synthetic();
    let a = lab(&[CAR], &[1]);
    let b = lab(&[CAR, CAR], &[1, 1]);
    assert!(panoptic_quality(&[a.clone()], &[b.clone()], &cfg).is_err());
    assert!(panoptic_quality(&[a.clone()], &[], &cfg).is_err());
    assert!(lstq(&[a], &[b], &cfg).is_err());
}

#[test]
fn mean_iou_examples() {
    let cfg = ClassConfig::synthetic();
    assert_eq!(mean_iou(&[CAR, ROAD], &[CAR, ROAD], &cfg).unwrap(), 1.0);
    assert_eq!(mean_iou(&[ROAD, CAR, CAR], &[CAR, CAR, ROAD], &cfg).unwrap(), (1.0 / 3.0 + 0.0) / 2.0);
    // car gt {0,1} pred {1,2}; veg gt {2} never predicted
    assert_eq!(mean_iou(&[0, CAR, CAR], &[CAR, CAR, VEG], &cfg).unwrap(), (1.0 / 3.0 + 0.0) / 2.0);
    assert_eq!(mean_iou(&[CAR, CAR, 0], &[CAR, CAR, 0], &cfg).unwrap(), 1.0);
}

/// Exhaustive oracle: segments as explicit sets, best same-class assignment
/// by total IoU over pairs with IoU > 0.5, then the PQ formulas per class.
fn oracle_pq(preds: &[PanopticLabeling], gts: &[PanopticLabeling], cfg: &ClassConfig) -> BTreeMap<ClassId, (f64, f64, f64)> {
    let mut tally: BTreeMap<ClassId, (f64, f64, f64, f64)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(gts) {
        let segs = |l: &PanopticLabeling| {
            let mut m: BTreeMap<(ClassId, InstanceId), BTreeSet<usize>> = BTreeMap::new();
            for i in 0..l.len() {
                if cfg.kind(g.semantic[i]) == ClassKind::Ignore {
                    continue;
                }
                let c = l.semantic[i];
                let key = match cfg.kind(c) {
                    ClassKind::Stuff => (c, 0),
                    ClassKind::Things if l.instance[i] > 0 => (c, l.instance[i]),
                    _ => continue,
                };
                m.entry(key).or_default().insert(i);
            }
            m.into_iter().collect::<Vec<_>>()
        };
        let gs = segs(g);
        let ps = segs(p);
        fn best(gs: &[((ClassId, InstanceId), BTreeSet<usize>)], ps: &[((ClassId, InstanceId), BTreeSet<usize>)], gi: usize, used: &mut Vec<bool>) -> (f64, Vec<(usize, usize, f64)>) {
            if gi == gs.len() {
                return (0.0, Vec::new());
            }
            let mut top = best(gs, ps, gi + 1, used);
            for pj in 0..ps.len() {
                if used[pj] || ps[pj].0 .0 != gs[gi].0 .0 {
                    continue;
                }
                let inter = gs[gi].1.intersection(&ps[pj].1).count() as f64;
                let iou = inter / (gs[gi].1.len() as f64 + ps[pj].1.len() as f64 - inter);
                if iou <= 0.5 {
                    continue;
                }
                used[pj] = true;
                let (s, mut v) = best(gs, ps, gi + 1, used);
                used[pj] = false;
                if s + iou > top.0 {
                    v.push((gi, pj, iou));
                    top = (s + iou, v);
                }
            }
            top
        }
        let (_, pairs) = best(&gs, &ps, 0, &mut vec![false; ps.len()]);
        for (gi, _, iou) in &pairs {
            let t = tally.entry(gs[*gi].0 .0).or_default();
            t.0 += 1.0;
            t.3 += iou;
        }
        for (gi, g) in gs.iter().enumerate() {
            if !pairs.iter().any(|x| x.0 == gi) {
                tally.entry(g.0 .0).or_default().2 += 1.0;
            }
        }
        for (pj, p) in ps.iter().enumerate() {
            if !pairs.iter().any(|x| x.1 == pj) {
                tally.entry(p.0 .0).or_default().1 += 1.0;
            }
        }
    }
    tally
        .into_iter()
        .map(|(c, (tp, fp, fnn, s))| {
            let sq = if tp > 0.0 { s / tp } else { 0.0 };
            let rq = tp / (tp + 0.5 * fp + 0.5 * fnn);
            (c, (sq * rq, sq, rq))
        })
        .collect()
}

fn micro_scene(rng: &mut ChaCha8Rng, n: usize) -> (PanopticLabeling, PanopticLabeling) {
    let classes = [0, PERSON, CAR, ROAD];
    let mut gs = Vec::new();
    let mut gi = Vec::new();
    let mut ps = Vec::new();
    let mut pi = Vec::new();
    for _ in 0..n {
        let g = classes[rng.random_range(0..4)];
        gs.push(g);
        gi.push(if g == PERSON || g == CAR { rng.random_range(0..3) } else { 0 });
        let p = if rng.random_bool(0.7) { g } else { classes[rng.random_range(0..4)] };
        ps.push(p);
        pi.push(if rng.random_bool(0.7) { gi[gi.len() - 1] } else { rng.random_range(0..3) });
    }
    (lab(&ps, &pi), lab(&gs, &gi))
}

#[test]
fn matches_exhaustive_oracle_on_micro_scenes() {
    let cfg = ClassConfig::synthetic();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let frames: Vec<_> = (0..rng.random_range(1..3)).map(|_| micro_scene(&mut rng, 8)).collect();
        let (p, g): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
        let r = panoptic_quality(&p, &g, &cfg).unwrap();
        let want = oracle_pq(&p, &g, &cfg);
        let got: Vec<_> = r.per_class.iter().filter(|c| c.has_segments).map(|c| c.class).collect();
        assert_eq!(got, want.keys().copied().collect::<Vec<_>>());
        for (c, (pq, sq, rq)) in want {
            let m = r.class(c).unwrap();
            assert!((m.pq - pq).abs() < 1e-12 && (m.sq - sq).abs() < 1e-12 && (m.rq - rq).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn pq_is_product_and_permutation_invariant(seed in any::<u64>(), n in 1usize..60, perm in Just([3u32, 1, 4, 2, 0]).prop_shuffle()) {
        let cfg = ClassConfig::synthetic();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = micro_scene(&mut rng, n);
        let r = panoptic_quality(&[p.clone()], &[g.clone()], &cfg).unwrap();
        for c in &r.per_class {
            prop_assert!((c.pq - c.sq * c.rq).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&c.pq));
        }
        let renamed = lab(&p.semantic, &p.instance.iter().map(|&i| if i == 0 { 0 } else { 10 + perm[i as usize] }).collect::<Vec<_>>());
        prop_assert_eq!(panoptic_quality(&[renamed], &[g], &cfg).unwrap(), r);
    }

    #[test]
    fn merge_equals_sequential(seed in any::<u64>(), split in 0usize..6) {
        let cfg = ClassConfig::synthetic();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<_> = (0..6).map(|_| micro_scene(&mut rng, 20)).collect();
        let mut all = PqAccumulator::new(&cfg);
        let mut a = PqAccumulator::new(&cfg);
        let mut b = PqAccumulator::new(&cfg);
        let mut la = LstqAccumulator::new(&cfg);
        let mut lb = LstqAccumulator::new(&cfg);
        let mut lall = LstqAccumulator::new(&cfg);
        for (k, (p, g)) in frames.iter().enumerate() {
            all.add_frame(p, g).unwrap();
            lall.add_frame(p, g).unwrap();
            if k < split { a.add_frame(p, g).unwrap(); la.add_frame(p, g).unwrap(); } else { b.add_frame(p, g).unwrap(); lb.add_frame(p, g).unwrap(); }
        }
        b.merge(&a);
        lb.merge(&la);
        let (x, y) = (b.report(), all.report());
        prop_assert_eq!(x.per_class.len(), y.per_class.len());
        for (u, v) in x.per_class.iter().zip(&y.per_class) {
            prop_assert_eq!((u.tp, u.fp, u.fn_), (v.tp, v.fp, v.fn_));
            prop_assert!((u.pq - v.pq).abs() < 1e-12);
        }
        prop_assert_eq!(lb.report().ok(), lall.report().ok());
    }
}

#[test]
fn damage_never_helps() {
    let cfg = ClassConfig::synthetic();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut light, mut heavy) = (0.0, 0.0);
    for _ in 0..200 {
        let (_, g) = micro_scene(&mut rng, 40);
        let perfect = panoptic_quality(&[g.clone()], &[g.clone()], &cfg).unwrap();
        let seq = lstq(&[g.clone()], &[g.clone()], &cfg);
        if let Ok(t) = &seq {
            assert!((t.lstq - 1.0).abs() < 1e-12);
        }
        assert!(perfect.per_class.iter().filter(|c| c.has_segments).all(|c| c.pq == 1.0));
        let mut order: Vec<usize> = (0..40).collect();
        for i in 0..40 {
            order.swap(i, rng.random_range(i..40));
        }
        let damage = |k: usize| {
            let mut d = g.clone();
            for &i in &order[..k] {
                d.semantic[i] = VEG;
                d.instance[i] = 0;
            }
            panoptic_quality(&[d], &[g.clone()], &cfg).unwrap().pq
        };
        let (a, b) = (damage(4), damage(16));
        assert!(a <= perfect.pq && b <= perfect.pq);
        light += a;
        heavy += b;
    }
    assert!(heavy < light);
}

/// Brute-force association score from explicit (frame, point) sets.
fn oracle_assoc(preds: &[PanopticLabeling], gts: &[PanopticLabeling], cfg: &ClassConfig) -> f64 {
    let mut gt_tracks: BTreeMap<InstanceId, BTreeSet<(usize, usize)>> = BTreeMap::new();
    let mut pr_tracks: BTreeMap<InstanceId, BTreeSet<(usize, usize)>> = BTreeMap::new();
    for (t, (p, g)) in preds.iter().zip(gts).enumerate() {
        for i in 0..g.len() {
            if cfg.kind(g.semantic[i]) == ClassKind::Ignore {
                continue;
            }
            if cfg.is_things(g.semantic[i]) && g.instance[i] > 0 {
                gt_tracks.entry(g.instance[i]).or_default().insert((t, i));
            }
            if p.instance[i] > 0 {
                pr_tracks.entry(p.instance[i]).or_default().insert((t, i));
            }
        }
    }
    let mut total = 0.0;
    for gt in gt_tracks.values() {
        let mut s = 0.0;
        for pr in pr_tracks.values() {
            let tpa = gt.intersection(pr).count() as f64;
            let iou = tpa / gt.union(pr).count() as f64;
            s += tpa * iou;
        }
        total += s / gt.len() as f64;
    }
    total / gt_tracks.len() as f64
}

#[test]
fn lstq_examples() {
    let cfg = ClassConfig::synthetic();
    let g = lab(&[CAR, CAR, ROAD], &[1, 1, 0]);
    let r = lstq(&[g.clone(), g.clone()], &[g.clone(), g.clone()], &cfg).unwrap();
    assert_eq!((r.lstq, r.s_assoc, r.s_cls), (1.0, 1.0, 1.0));

    let quarter = [lab(&[CAR, CAR, ROAD], &[1, 2, 0]), lab(&[CAR, CAR, ROAD], &[3, 4, 0])];
    let r = lstq(&quarter, &[g.clone(), g.clone()], &cfg).unwrap();
    assert!((r.s_assoc - 0.25).abs() < 1e-12);
    assert_eq!(r.s_cls, 1.0);
    assert!((r.lstq - 0.5).abs() < 1e-12);

    let split = [lab(&[CAR, CAR, ROAD], &[5, 5, 0]), lab(&[CAR, CAR, ROAD], &[6, 6, 0])];
    let r = lstq(&split, &[g.clone(), g.clone()], &cfg).unwrap();
    assert!((r.s_assoc - 0.5).abs() < 1e-12);
    assert!((r.lstq * r.lstq - r.s_assoc * r.s_cls).abs() < 1e-12);

    let no_tracks = lab(&[ROAD], &[0]);
    assert!(lstq(&[no_tracks.clone()], &[no_tracks], &cfg).is_err());
}

#[test]
fn lstq_matches_brute_force() {
    let cfg = ClassConfig::synthetic();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for _ in 0..400 {
        let frames = rng.random_range(1..5);
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..frames {
            let n = 10;
            let gs: Vec<ClassId> = (0..n).map(|_| [CAR, PERSON, ROAD, 0][rng.random_range(0..4)]).collect();
            let gi: Vec<InstanceId> = gs.iter().map(|&c| if c == CAR || c == PERSON { rng.random_range(0..4) } else { 0 }).collect();
            let ps: Vec<ClassId> = gs.iter().map(|&c| if rng.random_bool(0.8) { c } else { CAR }).collect();
            let pi: Vec<InstanceId> = gi.iter().map(|&i| if rng.random_bool(0.7) { i } else { rng.random_range(0..4) }).collect();
            gts.push(lab(&gs, &gi));
            preds.push(lab(&ps, &pi));
        }
        let Ok(r) = lstq(&preds, &gts, &cfg) else { continue };
        assert!((r.s_assoc - oracle_assoc(&preds, &gts, &cfg)).abs() < 1e-12);
        checked += 1;
    }
    assert!(checked > 300);
}

proptest! {
    #[test]
    fn lstq_is_invariant_to_track_renaming(seed in any::<u64>(), offset in 1u32..1000) {
        let cfg = ClassConfig::synthetic();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p1, g1) = micro_scene(&mut rng, 30);
        let (p2, g2) = micro_scene(&mut rng, 30);
        let rename = |l: &PanopticLabeling| lab(&l.semantic, &l.instance.iter().map(|&i| if i == 0 { 0 } else { offset + 7 * i }).collect::<Vec<_>>());
        let a = lstq(&[p1.clone(), p2.clone()], &[g1.clone(), g2.clone()], &cfg);
        let b = lstq(&[rename(&p1), rename(&p2)], &[g1, g2], &cfg);
        prop_assert_eq!(a.ok(), b.ok());
    }
}

#[test]
fn sequences_do_not_share_tracks() {
    let cfg = ClassConfig::synthetic();
    let g = lab(&[CAR, CAR], &[1, 1]);
    let mut acc = LstqAccumulator::new(&cfg);
    acc.add_frame(&g, &g).unwrap();
    acc.start_sequence(1);
    acc.add_frame(&lab(&[CAR, CAR], &[1, 1]), &g).unwrap();
    let r = acc.report().unwrap();
    assert_eq!(r.s_assoc, 1.0);
}
