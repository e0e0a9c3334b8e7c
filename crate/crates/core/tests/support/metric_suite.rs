//! Metrics against naive double-loop references written from the
//! definitions, on random instances large enough to take the k-d tree path.

use rand::Rng as _;
use shapecomp::eval::{mmd, tmd, tmd_mean, uhd, uhd_mean, EvalReport, Metric, MetricValue};
use shapecomp::geometry::{chamfer, hausdorff_uni, Vec3};
use shapecomp::rng::{seeded, Rng};
use shapecomp::PointCloud;

fn d2(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

fn naive_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let one = |x: &PointCloud, y: &PointCloud| {
        let mut total = 0.0;
        for p in x.points() {
            let mut best = f64::INFINITY;
            for q in y.points() {
                best = best.min(d2(p, q));
            }
            total += best;
        }
        total / x.len() as f64
    };
    one(a, b) + one(b, a)
}

fn naive_uhd_one(p: &PointCloud, c: &PointCloud) -> f64 {
    let mut worst = 0.0f64;
    for x in p.points() {
        let mut best = f64::INFINITY;
        for y in c.points() {
            best = best.min(d2(x, y).sqrt());
        }
        worst = worst.max(best);
    }
    worst
}

fn naive_mmd(test: &[PointCloud], gen: &[PointCloud]) -> f64 {
    test.iter().map(|t| gen.iter().map(|g| naive_chamfer(t, g)).fold(f64::INFINITY, f64::min)).sum::<f64>()
        / test.len() as f64
}

/// Sum over completions of the mean Chamfer distance to the other k-1.
fn naive_tmd(cs: &[PointCloud]) -> f64 {
    let k = cs.len();
    (0..k)
        .map(|j| (0..k).filter(|&l| l != j).map(|l| naive_chamfer(&cs[j], &cs[l])).sum::<f64>() / (k - 1) as f64)
        .sum()
}

fn cloud(rng: &mut Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

pub fn accelerated_metrics_match_naive_references() {
    let mut rng = seeded(9);
    for case in 0..50 {
        let n = rng.random_range(20..200);
        let k = rng.random_range(2..5);
        let a = cloud(&mut rng, n);
        let m = rng.random_range(20..200);
        let b = cloud(&mut rng, m);
        assert!(close(chamfer(&a, &b), naive_chamfer(&a, &b)), "chamfer case {case}");
        assert!(close(hausdorff_uni(&a, &b), naive_uhd_one(&a, &b)), "uhd case {case}");

        let comps: Vec<PointCloud> = (0..k).map(|_| cloud(&mut rng, n)).collect();
        let partial = cloud(&mut rng, n / 2 + 1);
        assert!(close(tmd(&comps).unwrap(), naive_tmd(&comps)), "tmd case {case}");
        let naive_u = comps.iter().map(|c| naive_uhd_one(&partial, c)).sum::<f64>() / k as f64;
        assert!(close(uhd(&partial, &comps).unwrap(), naive_u), "uhd mean case {case}");

        let test: Vec<PointCloud> = (0..3).map(|_| cloud(&mut rng, n)).collect();
        assert!(close(mmd(&test, &comps).unwrap(), naive_mmd(&test, &comps)), "mmd case {case}");
    }
}

pub fn set_means_average_per_partial_values() {
    let mut rng = seeded(4);
    let sets: Vec<Vec<PointCloud>> = (0..4).map(|_| (0..3).map(|_| cloud(&mut rng, 80)).collect()).collect();
    let partials: Vec<PointCloud> = (0..4).map(|_| cloud(&mut rng, 40)).collect();
    let expect_t = sets.iter().map(|s| naive_tmd(s)).sum::<f64>() / 4.0;
    assert!(close(tmd_mean(&sets).unwrap(), expect_t));
    let pairs: Vec<(&PointCloud, &[PointCloud])> = partials.iter().zip(&sets).map(|(p, s)| (p, s.as_slice())).collect();
    let expect_u = partials
        .iter()
        .zip(&sets)
        .map(|(p, s)| s.iter().map(|c| naive_uhd_one(p, c)).sum::<f64>() / 3.0)
        .sum::<f64>()
        / 4.0;
    assert!(close(uhd_mean(&pairs).unwrap(), expect_u));
}

pub fn tmd_is_order_free_and_mmd_vanishes_on_supersets() {
    let mut rng = seeded(5);
    let cs: Vec<PointCloud> = (0..5).map(|_| cloud(&mut rng, 50)).collect();
    let mut rev = cs.clone();
    rev.reverse();
    assert!(close(tmd(&cs).unwrap(), tmd(&rev).unwrap()));
    let mut pool = cs.clone();
    pool.push(cloud(&mut rng, 50));
    assert_eq!(mmd(&cs, &pool).unwrap(), 0.0);
    assert_eq!(tmd(&cs[..1]).unwrap(), 0.0);
}

pub fn scaled_values_use_exact_factors() {
    let mut rng = seeded(6);
    let metrics: Vec<MetricValue> = (0..50)
        .map(|i| MetricValue::new(Metric::ALL[i % 3], rng.random_range(0.0..1.0)))
        .collect();
    for m in &metrics {
        let factor = match m.metric {
            Metric::Mmd => 1e3,
            Metric::Tmd | Metric::Uhd => 1e2,
        };
        assert_eq!(m.scaled, m.raw * factor);
    }
    let report = EvalReport { k: 10, seed: 1, fingerprint: "x".into(), metrics, per_shape: vec![] };
    let csv = report.to_csv();
    assert!(csv.starts_with("metric,raw,scaled\n"));
    assert_eq!(csv.lines().count(), 51);
}

pub fn unknown_metric_lists_valid_names() {
    let err = "umd".parse::<Metric>().unwrap_err().to_string();
    assert!(err.contains("mmd, tmd, uhd"), "{err}");
}

pub const SUITE: [(&str, fn()); 5] = [
    ("accelerated_metrics_match_naive_references", accelerated_metrics_match_naive_references),
    ("set_means_average_per_partial_values", set_means_average_per_partial_values),
    ("tmd_is_order_free_and_mmd_vanishes_on_supersets", tmd_is_order_free_and_mmd_vanishes_on_supersets),
    ("scaled_values_use_exact_factors", scaled_values_use_exact_factors),
    ("unknown_metric_lists_valid_names", unknown_metric_lists_valid_names),
];
