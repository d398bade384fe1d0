use caranet::metrics::{MetricReport, SampleMetrics};
use caranet::size::*;
use caranet::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pt(r: f64, d: f64) -> SizePoint {
    SizePoint {
        id: format!("{r}"),
        size_ratio: r,
        dice: d,
    }
}

fn curve_from(means: &[Option<f64>]) -> SizeCurve {
    let n = means.len();
    let points: Vec<SizePoint> = means
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|d| pt((i as f64 + 0.5) / n as f64, d)))
        .collect();
    interval_average(&points, 0.0, 1.0, n).unwrap()
}

#[test]
fn size_ratio_counts_foreground() {
    assert_eq!(size_ratio(&Tensor::<f32>::ones(&[1, 4, 4])), 1.0);
    assert_eq!(size_ratio(&Tensor::<f32>::zeros(&[1, 4, 4])), 0.0);
    let mut m = Tensor::<f32>::zeros(&[1, 256, 256]);
    m.data_mut()[1234] = 1.0;
    assert_eq!(size_ratio(&m), 1.0 / 65536.0);
}

#[test]
fn hand_computed_interval_fixture() {
    let pts = [pt(0.01, 0.2), pt(0.02, 0.4), pt(0.06, 0.9)];
    let c = interval_average(&pts, 0.0, 0.1, 2).unwrap();
    let a = c.bins[0].unwrap();
    let b = c.bins[1].unwrap();
    assert_eq!(a.mean_dice, (0.2 + 0.4) / 2.0);
    assert_eq!(b.mean_dice, 0.9);
    assert_eq!((a.count, b.count), (2, 1));
    assert_eq!((a.lo, a.hi, b.lo, b.hi), (0.0, 0.05, 0.05, 0.1));
    assert_eq!(c.dropped, 0);
    assert_eq!(c.to_csv(), format!("interval_lo,interval_hi,mean_dice,count\n0,0.05,{},2\n0.05,0.1,0.9,1\n", (0.2 + 0.4) / 2.0));
}

#[test]
fn single_point_and_constant_dice() {
    let c = interval_average(&[pt(0.3, 0.7)], 0.0, 1.0, 4).unwrap();
    assert_eq!(c.populated().count(), 1);
    assert_eq!(c.bins[1].unwrap().mean_dice, 0.7);
    let pts: Vec<_> = (0..40).map(|i| pt(i as f64 / 40.0, 0.625)).collect();
    let c = interval_average(&pts, 0.0, 1.0, 7).unwrap();
    assert!(c.populated().all(|(_, b)| b.mean_dice == 0.625));
}

#[test]
fn edges_and_out_of_range_points() {
    let pts = [pt(0.0, 1.0), pt(1.0, 0.5), pt(-0.1, 0.0), pt(1.2, 0.0), pt(f64::NAN, 0.0)];
    let c = interval_average(&pts, 0.0, 1.0, 4).unwrap();
    assert_eq!(c.bins[0].unwrap().count, 1);
    assert_eq!(c.bins[3].unwrap().count, 1);
    assert_eq!(c.dropped, 3);
    assert!(c.bins[1].is_none() && c.bins[2].is_none());
    assert!(interval_average(&pts, 0.0, 1.0, 0).is_err());
    assert!(interval_average(&pts, 1.0, 1.0, 3).is_err());
}

#[test]
fn identical_curves_compare_to_zero() {
    let c = curve_from(&[Some(0.1), None, Some(0.5), Some(0.9)]);
    let cmp = compare_curves(&c, &c).unwrap();
    assert_eq!(cmp.rows.len(), 3);
    assert!(cmp.rows.iter().all(|r| r.diff == 0.0));
    assert_eq!((cmp.sum_positive, cmp.sum_negative), (0.0, 0.0));
}

#[test]
fn uniform_lead_sums_to_half() {
    let base = [0.125, 0.25, 0.375, 0.5, 0.625];
    let a = curve_from(&base.map(|v| Some(v + 0.1)));
    let b = curve_from(&base.map(Some));
    let cmp = compare_curves(&a, &b).unwrap();
    let expect: f64 = base.iter().map(|v| (v + 0.1) - v).sum();
    assert_eq!(cmp.sum_positive, expect);
    assert!((cmp.sum_positive - 0.5).abs() < 1e-12);
    assert_eq!(cmp.sum_negative, 0.0);
}

#[test]
fn comparison_is_antisymmetric_and_skips_half_empty_intervals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut pick = || -> Vec<Option<f64>> {
            (0..8).map(|_| if rng.gen_bool(0.8) { Some(rng.gen_range(0.0..1.0)) } else { None }).collect()
        };
        let (ma, mb) = (pick(), pick());
        let (a, b) = (curve_from(&ma), curve_from(&mb));
        let ab = compare_curves(&a, &b).unwrap();
        let ba = compare_curves(&b, &a).unwrap();
        assert_eq!(ab.sum_positive, -ba.sum_negative);
        assert_eq!(ab.sum_negative, -ba.sum_positive);
        let both = ma.iter().zip(&mb).filter(|(x, y)| x.is_some() && y.is_some()).count();
        assert_eq!(ab.rows.len(), both);
        let mut pos = 0.0;
        let mut neg = 0.0;
        for r in &ab.rows {
            assert_eq!(r.diff, r.a - r.b);
            if r.diff > 0.0 {
                pos += r.diff;
            } else {
                neg += r.diff;
            }
        }
        assert_eq!((pos, neg), (ab.sum_positive, ab.sum_negative));
    }
}

#[test]
fn mismatched_grids_are_rejected() {
    let a = interval_average(&[pt(0.5, 0.5)], 0.0, 1.0, 4).unwrap();
    let b = interval_average(&[pt(0.5, 0.5)], 0.0, 1.0, 5).unwrap();
    let c = interval_average(&[pt(0.5, 0.5)], 0.0, 0.8, 4).unwrap();
    assert!(compare_curves(&a, &b).is_err());
    assert!(compare_curves(&a, &c).is_err());
}

#[test]
fn watershed_cases() {
    let flat = curve_from(&[Some(0.5); 6]);
    assert_eq!(watershed(&flat, 3, 1e-6).unwrap(), Some(flat.edge(0)));

    let k = 4;
    let mut means: Vec<Option<f64>> = (0..k).map(|i| Some(0.1 * i as f64)).collect();
    means.extend(std::iter::repeat(Some(0.8)).take(6));
    let c = curve_from(&means);
    assert_eq!(watershed(&c, 3, 1e-6).unwrap(), Some(c.edge(k)));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ramp: Vec<_> = (0..10).map(|i| Some(0.05 * i as f64 + rng.gen_range(0.0..0.01))).collect();
    assert_eq!(watershed(&curve_from(&ramp), 3, 0.0).unwrap(), None);

    assert!(watershed(&curve_from(&[Some(0.1), Some(0.2)]), 3, 0.1).is_err());
}

#[test]
fn watershed_returns_an_edge() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let means: Vec<_> = (0..12).map(|_| if rng.gen_bool(0.8) { Some(rng.gen_range(0.4..0.6)) } else { None }).collect();
        let c = curve_from(&means);
        if c.populated().count() < 3 {
            continue;
        }
        if let Some(t) = watershed(&c, 3, 0.05).unwrap() {
            assert!((0..=c.n_intervals()).any(|i| c.edge(i) == t));
        }
    }
}

fn row(id: &str, ratio: f64, dice: f64) -> SampleMetrics {
    SampleMetrics {
        id: id.into(),
        size_ratio: ratio,
        dice,
        iou: dice / (2.0 - dice),
        f_beta_w: dice * 0.9,
        s_alpha: 0.5 + dice / 4.0,
        e_phi_max: 0.6 + dice / 4.0,
        mae: 0.1 * (1.0 - dice),
    }
}

#[test]
fn filter_small_keeps_rows_at_or_below_cutoff() {
    let rows = vec![
        row("a", 0.01, 0.2),
        row("b", 0.05, 0.6),
        row("c", 0.051, 0.9),
        row("d", 0.03, 0.4),
        row("e", 0.2, 1.0),
    ];
    let report = MetricReport { rows };
    let small = filter_small(&report, SMALL_CUTOFF).unwrap();
    let ids: Vec<_> = small.rows.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, vec!["a", "b", "d"]);
    let m = small.means().unwrap();
    assert!((m.dice - (0.2 + 0.6 + 0.4) / 3.0).abs() < 1e-15);
    assert!((m.mae - (0.08 + 0.04 + 0.06) / 3.0).abs() < 1e-15);
    assert_eq!(filter_small(&report, 1.0).unwrap(), report);
    assert!(filter_small(&report, 0.001).is_err());
    assert!(filter_small(&report, 0.0).is_err());
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<SizePoint> {
    (0..n).map(|_| pt(rng.gen_range(0.0..0.1), rng.gen_range(0.0..1.0))).collect()
}

#[test]
fn merging_point_sets_is_a_count_weighted_merge() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let a = random_points(&mut rng, 30);
        let b = random_points(&mut rng, 45);
        let ca = interval_average(&a, 0.0, 0.1, 6).unwrap();
        let cb = interval_average(&b, 0.0, 0.1, 6).unwrap();
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let cab = interval_average(&all, 0.0, 0.1, 6).unwrap();
        for i in 0..6 {
            let parts: Vec<&Interval> = [&ca.bins[i], &cb.bins[i]].into_iter().flatten().collect();
            match cab.bins[i] {
                None => assert!(parts.is_empty()),
                Some(m) => {
                    let n: usize = parts.iter().map(|p| p.count).sum();
                    let s: f64 = parts.iter().map(|p| p.mean_dice * p.count as f64).sum();
                    assert_eq!(m.count, n);
                    assert!((m.mean_dice - s / n as f64).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn interval_average_ignores_point_order(seed in any::<u64>(), n in 1usize..60, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = random_points(&mut rng, n);
        let a = interval_average(&pts, 0.0, 0.1, k).unwrap();
        pts.shuffle(&mut rng);
        let b = interval_average(&pts, 0.0, 0.1, k).unwrap();
        prop_assert_eq!(&a, &b);
        let assigned: usize = a.populated().map(|(_, i)| i.count).sum();
        prop_assert_eq!(assigned + a.dropped, n);
    }
}
