use caranet::metrics::*;
use caranet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plane(h: usize, w: usize, v: &[f64]) -> Plane {
    Plane::new(h, w, v.to_vec()).unwrap()
}

mod oracle;

#[test]
fn binarize_examples() {
    let p = plane(1, 3, &[0.6, 0.5, 0.49]);
    assert_eq!(binarize(&p, 0.5).unwrap().data, vec![1.0, 1.0, 0.0]);
    assert_eq!(binarize(&plane(1, 2, &[0.49, 0.51]), 0.5).unwrap().data, vec![0.0, 1.0]);
    assert!(binarize(&p, 0.0).is_err());
    assert!(binarize(&p, 1.0).is_err());
}

#[test]
fn dice_iou_examples() {
    let g = plane(2, 4, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let p = plane(2, 4, &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    assert_eq!(dice(&p, &g).unwrap(), 0.5);
    assert_eq!(iou(&p, &g).unwrap(), 1.0 / 3.0);
    assert_eq!(dice(&g, &g).unwrap(), 1.0);
    let z = plane(2, 4, &[0.0; 8]);
    assert_eq!(dice(&z, &z).unwrap(), 1.0);
    assert_eq!(iou(&z, &z).unwrap(), 1.0);
    let inv = plane(2, 4, &g.data.iter().map(|v| 1.0 - v).collect::<Vec<_>>());
    assert_eq!(dice(&inv, &g).unwrap(), 0.0);
    assert!(dice(&plane(1, 8, &[0.0; 8]), &g).is_err());
}

#[test]
fn mae_examples() {
    let g = plane(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(mae(&g, &g).unwrap(), 0.0);
    let inv = plane(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    assert_eq!(mae(&inv, &g).unwrap(), 1.0);
    assert_eq!(mae(&plane(2, 2, &[0.25; 4]), &plane(2, 2, &[0.0; 4])).unwrap(), 0.25);
    let p = plane(2, 2, &[0.1, 0.7, 0.3, 0.9]);
    let p_inv = plane(2, 2, &p.data.iter().map(|v| 1.0 - v).collect::<Vec<_>>());
    assert!((mae(&p, &g).unwrap() - mae(&p_inv, &inv).unwrap()).abs() < 1e-15);
}

/// All 512 x 512 pairs of 3x3 binary maps against counting oracles.
#[test]
fn dice_iou_mae_match_counting_on_every_3x3_pair() {
    let bits = |m: u32| -> Vec<f64> { (0..9).map(|i| ((m >> i) & 1) as f64).collect() };
    for a in 0..512u32 {
        let p = plane(3, 3, &bits(a));
        for b in 0..512u32 {
            let g = plane(3, 3, &bits(b));
            let inter = (a & b).count_ones() as f64;
            let (np, ng) = (a.count_ones() as f64, b.count_ones() as f64);
            let union = (a | b).count_ones() as f64;
            let d = if np + ng == 0.0 { 1.0 } else { 2.0 * inter / (np + ng) };
            let j = if union == 0.0 { 1.0 } else { inter / union };
            let m = (a ^ b).count_ones() as f64 / 9.0;
            let (dd, jj) = (dice(&p, &g).unwrap(), iou(&p, &g).unwrap());
            assert_eq!(dd, d);
            assert_eq!(jj, j);
            assert_eq!(mae(&p, &g).unwrap(), m);
            assert!(jj <= dd);
            assert!((dd - 2.0 * jj / (1.0 + jj)).abs() < 1e-15);
        }
    }
}

fn random_case(seed: u64, h: usize, w: usize) -> (Plane, Plane) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = rng.gen_range(0.1..0.6);
    let g: Vec<f64> = (0..h * w).map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 }).collect();
    let p: Vec<f64> = g
        .iter()
        .map(|&v| (0.6 * v + rng.gen_range(0.0..0.4) + if rng.gen_bool(0.2) { 0.3 } else { 0.0 }).min(1.0))
        .collect();
    (plane(h, w, &p), plane(h, w, &g))
}

fn mask(p: &Plane) -> Vec<bool> {
    p.data.iter().map(|&v| v == 1.0).collect()
}

#[test]
fn structure_measures_match_oracle_on_random_8x8_cases() {
    for seed in 0..25 {
        let (p, g) = random_case(seed, 8, 8);
        let gm = mask(&g);
        let f = f_beta_w(&p, &g).unwrap();
        let s = s_alpha(&p, &g).unwrap();
        let e = e_phi_max(&p, &g).unwrap();
        let (fo, so, eo) = (oracle::wfb(&p.data, &gm, 8, 8), oracle::smeasure(&p.data, &gm, 8, 8), oracle::emeasure_max(&p.data, &gm));
        assert!((f - fo).abs() < 1e-9, "seed {seed}: fbw {f} vs {fo}");
        assert!((s - so).abs() < 1e-9, "seed {seed}: salpha {s} vs {so}");
        assert!((e - eo).abs() < 1e-9, "seed {seed}: ephi {e} vs {eo}");
        for v in [f, s, e] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn structure_measures_match_oracle_on_binary_3x3_pairs() {
    let bits = |m: u32| -> Vec<f64> { (0..9).map(|i| ((m >> i) & 1) as f64).collect() };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..25 {
        let (a, b) = (rng.gen_range(0..512u32), rng.gen_range(0..512u32));
        let (p, g) = (plane(3, 3, &bits(a)), plane(3, 3, &bits(b)));
        let gm = mask(&g);
        assert!((f_beta_w(&p, &g).unwrap() - oracle::wfb(&p.data, &gm, 3, 3)).abs() < 1e-9);
        assert!((s_alpha(&p, &g).unwrap() - oracle::smeasure(&p.data, &gm, 3, 3)).abs() < 1e-9);
        assert!((e_phi_max(&p, &g).unwrap() - oracle::emeasure_max(&p.data, &gm)).abs() < 1e-9);
    }
}

#[test]
fn perfect_prediction_scores_one() {
    let (_, g) = random_case(7, 8, 8);
    let m = evaluate_sample("x", &g, &g).unwrap();
    assert_eq!((m.dice, m.iou, m.mae), (1.0, 1.0, 0.0));
    assert!((m.f_beta_w - 1.0).abs() < 1e-12, "{}", m.f_beta_w);
    assert!((m.s_alpha - 1.0).abs() < 1e-12, "{}", m.s_alpha);
    assert!((m.e_phi_max - 1.0).abs() < 1e-12, "{}", m.e_phi_max);
}

#[test]
fn degenerate_masks_follow_pinned_conventions() {
    let z = plane(4, 4, &[0.0; 16]);
    let one = plane(4, 4, &[1.0; 16]);
    let p = plane(4, 4, &[0.25; 16]);
    assert_eq!(s_alpha(&z, &z).unwrap(), 1.0);
    assert_eq!(s_alpha(&p, &z).unwrap(), 0.75);
    assert_eq!(s_alpha(&p, &one).unwrap(), 0.25);
    assert_eq!(f_beta_w(&z, &z).unwrap(), 1.0);
    assert_eq!(f_beta_w(&p, &z).unwrap(), 0.0);
    assert_eq!(e_phi_max(&z, &z).unwrap(), 1.0);
}

#[test]
fn inverted_prediction_on_5x5() {
    let mut g = vec![0.0; 25];
    for i in [6, 7, 8, 11, 12, 13, 16, 17, 18] {
        g[i] = 1.0;
    }
    let g = plane(5, 5, &g);
    let inv = plane(5, 5, &g.data.iter().map(|v| 1.0 - v).collect::<Vec<_>>());
    let gm = mask(&g);
    // Zero padding in the error smoothing leaves some credit on a 5x5
    // field, so the score matches the reference formula rather than 0.
    let f = f_beta_w(&inv, &g).unwrap();
    assert!((f - oracle::wfb(&inv.data, &gm, 5, 5)).abs() < 1e-12);
    assert!(f < 0.3, "{f}");
    // Where the binarized map is not constant the alignment is total
    // disagreement.
    for k in 1..=255 {
        let e = e_phi_at(&inv, &g, k as f64 / 255.0).unwrap();
        assert!(e < 1e-12, "threshold {k}: {e}");
    }
    assert_eq!(e_phi_at(&inv, &g, 0.0).unwrap(), 0.25);
}

#[test]
fn e_max_dominates_fixed_threshold() {
    for seed in 0..10 {
        let (p, g) = random_case(100 + seed, 8, 8);
        assert!(e_phi_max(&p, &g).unwrap() >= e_phi_at(&p, &g, 0.5).unwrap());
    }
}

#[test]
fn pixel_local_metrics_ignore_spatial_permutation() {
    let (p, g) = random_case(5, 8, 8);
    let perm: Vec<usize> = (0..64).map(|i| (i * 37 + 5) % 64).collect();
    let pp = plane(8, 8, &perm.iter().map(|&i| p.data[i]).collect::<Vec<_>>());
    let gp = plane(8, 8, &perm.iter().map(|&i| g.data[i]).collect::<Vec<_>>());
    let b = binarize(&p, 0.5).unwrap();
    let bp = binarize(&pp, 0.5).unwrap();
    assert_eq!(dice(&b, &g).unwrap(), dice(&bp, &gp).unwrap());
    assert_eq!(iou(&b, &g).unwrap(), iou(&bp, &gp).unwrap());
    assert!((mae(&p, &g).unwrap() - mae(&pp, &gp).unwrap()).abs() < 1e-15);
}

#[test]
fn report_csv_round_trip() {
    let rows: Vec<SampleMetrics> = (0..3)
        .map(|i| {
            let (p, g) = random_case(200 + i, 8, 8);
            evaluate_sample(&format!("s{i}"), &p, &g).unwrap()
        })
        .collect();
    let report = MetricReport { rows };
    let csv = report.to_csv();
    assert!(csv.starts_with("id,size_ratio,dice,iou,fbw,salpha,ephi,mae\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("MEAN,"));
    let back = MetricReport::from_csv(&csv).unwrap();
    assert_eq!(back, report);
    let one = MetricReport { rows: report.rows[..1].to_vec() };
    let mut m = one.means().unwrap();
    m.id = report.rows[0].id.clone();
    assert_eq!(m, report.rows[0]);
    assert!(MetricReport::from_csv("id,dice\n").is_err());
}

#[test]
fn plane_from_tensor_requires_single_plane() {
    let t = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
    assert_eq!(Plane::from_tensor(&t).unwrap().h, 4);
    assert!(Plane::from_tensor(&Tensor::<f32>::zeros(&[2, 4, 4])).is_err());
    let g = plane(2, 2, &[0.5, 0.0, 0.0, 1.0]);
    assert!(s_alpha(&g, &g).is_err());
}
