//! Acceptance criteria. Runs as a plain binary and prints one line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scene_eval::blobs::{connected_components, Connectivity};
use scene_eval::counting::{counts_from_density, game, gmae, gmae_per_km2, r_squared, CellCounts, Patch, SourceKind};
use scene_eval::geo::{make_grid, AffineGeoref, Raster, RasterKind, WorldPoint};
use scene_eval::io::{read_labels, read_raster, write_labels_csv, write_raster};
use scene_eval::labels::{density_mask, rasterize_points, PointLabelSet, DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA_PX};
use scene_eval::matching::{
    conservative_match, max_cardinality_matching, optimistic_match, sensitivity_sweep, BipartiteGraph,
};
use scene_eval::report::{evaluate_scene, gridmetrics_scene, to_json_bytes, Command, RunConfig, SceneInputs};
use scene_eval::synthgen::{generate, PredictionForm, SynthConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn degenerate_accounting() -> Outcome {
    let cfg = SynthConfig {
        scene_size_m: (400.0, 400.0),
        resolution_m: 0.5,
        n_animals: 100,
        label_jitter_max_m: 1.0,
        seed: 101,
        ..SynthConfig::default()
    };
    let s = generate(&cfg).map_err(|e| e.to_string())?;
    let p = &s.prediction;
    let all = Raster::new(
        p.width(),
        p.height(),
        vec![1.0; p.width() * p.height()],
        *p.georef(),
        RasterKind::Binary,
    )
    .map_err(|e| e.to_string())?;
    let labeling = connected_components(&all, Connectivity::Eight).map_err(|e| e.to_string())?;
    let opt = optimistic_match(&labeling, &s.labels, 4.0).map_err(|e| e.to_string())?;
    let con = conservative_match(&labeling, &s.labels, 4.0).map_err(|e| e.to_string())?;
    let got = ((opt.tp, opt.fp, opt.r#fn), (con.tp, con.fp, con.r#fn));
    ensure(got == ((100, 0, 0), (1, 0, 99)), || format!("got {got:?}"))?;
    Ok(format!("optimistic {:?}, conservative {:?}", got.0, got.1))
}

/// Maximum matching size by exhaustive search over right-side subsets.
fn brute_force_matching(n_left: usize, adj: &[Vec<usize>]) -> usize {
    fn go(u: usize, used: u32, n_left: usize, adj: &[Vec<usize>]) -> usize {
        if u == n_left {
            return 0;
        }
        let mut best = go(u + 1, used, n_left, adj);
        for &v in &adj[u] {
            if used & (1 << v) == 0 {
                best = best.max(1 + go(u + 1, used | (1 << v), n_left, adj));
            }
        }
        best
    }
    go(0, 0, n_left, adj)
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let n_left = rng.random_range(0..=10usize);
        let n_right = rng.random_range(0..=10usize);
        let density = rng.random::<f64>();
        let mut adj = vec![Vec::new(); n_left];
        let mut edges = Vec::new();
        for (u, row) in adj.iter_mut().enumerate() {
            for v in 0..n_right {
                if rng.random::<f64>() < density {
                    row.push(v);
                    edges.push((u, v));
                }
            }
        }
        let g = BipartiteGraph::from_edges(n_left, n_right, &edges).map_err(|e| e.to_string())?;
        let m = max_cardinality_matching(&g);
        let want = brute_force_matching(n_left, &adj);
        ensure(m.len() == want, || {
            format!("case {case}: matching {} vs brute force {want}", m.len())
        })?;
    }
    Ok("1000/1000 instances agree".into())
}

fn tp_monotonicity() -> Outcome {
    let d_values: Vec<f64> = (1..=8).map(f64::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for scene in 0..100u64 {
        let cfg = SynthConfig {
            scene_size_m: (120.0, 120.0),
            n_animals: rng.random_range(1..=15),
            label_jitter_max_m: rng.random_range(0.0..6.0),
            fp_rate: rng.random_range(0.0..0.5),
            fn_rate: rng.random_range(0.0..0.5),
            displacement_m: if rng.random::<f64>() < 0.3 {
                rng.random_range(0.0..5.0)
            } else {
                0.0
            },
            max_cutoff_m: 4.0,
            seed: scene,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).map_err(|e| format!("scene {scene}: {e}"))?;
        let labeling = connected_components(&s.prediction, Connectivity::Eight).map_err(|e| e.to_string())?;
        let reports = sensitivity_sweep(&labeling, &s.labels, &d_values).map_err(|e| e.to_string())?;
        for w in reports.windows(2) {
            for (a, b, mode) in [
                (&w[0].conservative, &w[1].conservative, "conservative"),
                (&w[0].optimistic, &w[1].optimistic, "optimistic"),
            ] {
                ensure(b.result.tp >= a.result.tp, || {
                    format!(
                        "scene {scene} {mode}: tp {} at d={} then {} at d={}",
                        a.result.tp, w[0].cutoff_d, b.result.tp, w[1].cutoff_d
                    )
                })?;
            }
        }
    }
    Ok("0 violations over 100 scenes x 8 cutoffs".into())
}

fn mass_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let half = (DEFAULT_KERNEL_SIZE / 2) as f64;
    let mut worst_mask = 0.0f64;
    let mut worst_grid = 0.0f64;
    for trial in 0..20 {
        let (w, h) = (rng.random_range(40..300usize), rng.random_range(40..300usize));
        let res = rng.random_range(0.2..2.0);
        let georef = AffineGeoref::square(rng.random_range(-1e5..1e5), rng.random_range(-1e5..1e5), res)
            .map_err(|e| e.to_string())?;
        let k = rng.random_range(1..200usize);
        let mut pixels = std::collections::BTreeSet::new();
        while pixels.len() < k {
            let c = rng.random_range(half as usize..w - half as usize);
            let r = rng.random_range(half as usize..h - half as usize);
            pixels.insert((c, r));
        }
        let points: Vec<WorldPoint> = pixels.iter().map(|&(c, r)| georef.pixel_center(c, r)).collect();
        let labels = PointLabelSet::new(points, 4.0, "").map_err(|e| e.to_string())?;
        let raster = rasterize_points(&labels, georef, w, h).map_err(|e| e.to_string())?;
        ensure(raster.collisions == 0 && raster.dropped.is_empty(), || {
            format!("trial {trial}: points lost")
        })?;
        let mask = density_mask(&raster.raster, DEFAULT_KERNEL_SIZE, DEFAULT_SIGMA_PX).map_err(|e| e.to_string())?;
        let err = (mask.raster.total() - k as f64).abs();
        worst_mask = worst_mask.max(err);
        ensure(err <= 1e-9, || {
            format!("trial {trial}: mask mass {} for {k} points", mask.raster.total())
        })?;

        for r in [res * 7.0, 25.0, 64.0, 1000.0] {
            let grid = make_grid(&mask.raster, r, None).map_err(|e| e.to_string())?;
            let counts = counts_from_density(&mask.raster, &grid).map_err(|e| e.to_string())?;
            let err = (counts.iter().sum::<f64>() - mask.raster.total()).abs();
            worst_grid = worst_grid.max(err);
            ensure(err <= 1e-6, || format!("trial {trial}, r={r}: grid sum off by {err}"))?;
        }
    }
    Ok(format!(
        "max mask error {worst_mask:.1e}, max grid error {worst_grid:.1e}"
    ))
}

fn game_is_mae() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let side = 1usize << rng.random_range(0..5u32);
        let n = rng.random_range(1..8usize);
        let ds: Vec<Patch> = (0..n)
            .map(|_| {
                // dyadic values keep every partial sum exact
                let mut v = || {
                    (0..side * side)
                        .map(|_| rng.random_range(0..4096u32) as f64 / 256.0)
                        .collect()
                };
                Patch::new(side, v(), v()).unwrap()
            })
            .collect();
        let mae = ds
            .iter()
            .map(|p| (p.pred().iter().sum::<f64>() - p.gt().iter().sum::<f64>()).abs())
            .sum::<f64>()
            / n as f64;
        let g0 = game(&ds, 0).map_err(|e| e.to_string())?;
        ensure(g0 == mae, || format!("case {case}: GAME(0) {g0} vs MAE {mae}"))?;
    }
    let gt = [(0.5, 0.5), (1.5, 0.5), (0.5, 1.5), (1.5, 1.5)];
    let pred = [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)];
    let p = Patch::from_points(4, &gt, &pred).map_err(|e| e.to_string())?;
    let g1 = game(&[p], 1).map_err(|e| e.to_string())?;
    ensure(g1 == 6.0, || format!("worked example GAME(1) = {g1}"))?;
    Ok("200 random datasets exact; worked example GAME(1) = 6".into())
}

fn gmae_normalization() -> Outcome {
    let v = gmae_per_km2(0.134, 100.0).map_err(|e| e.to_string())?;
    ensure((v - 13.4).abs() <= 1e-12, || format!("got {v}"))?;
    Ok(format!("gmae_per_km2(0.134, 100) = {v}"))
}

fn r_squared_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // counts in a band around the mean so 2 * mean - y stays a valid count
    let gt: Vec<f64> = (0..64).map(|_| rng.random_range(10..=20u32) as f64).collect();
    let mean = gt.iter().sum::<f64>() / gt.len() as f64;
    let cells = |pred: Vec<f64>| CellCounts::new(gt.clone(), pred, SourceKind::Density, 100.0).unwrap();
    let perfect = r_squared(&cells(gt.clone())).map_err(|e| format!("{e:?}"))?;
    let mean_pred = r_squared(&cells(vec![mean; gt.len()])).map_err(|e| format!("{e:?}"))?;
    let adversarial = r_squared(&cells(gt.iter().map(|y| 2.0 * mean - y).collect())).map_err(|e| format!("{e:?}"))?;
    ensure(perfect == 1.0, || format!("perfect predictor R2 = {perfect}"))?;
    ensure(mean_pred.abs() <= 1e-12, || format!("mean predictor R2 = {mean_pred}"))?;
    ensure(adversarial < 0.0, || {
        format!("adversarial predictor R2 = {adversarial}")
    })?;
    let g = gmae(&cells(gt.clone()));
    ensure(g == 0.0, || format!("perfect predictor GMAE = {g}"))?;
    Ok(format!(
        "perfect {perfect}, mean {mean_pred:.1e}, adversarial {adversarial:.3}"
    ))
}

fn cutoff_curve_shape() -> Outcome {
    let cfg = SynthConfig {
        scene_size_m: (600.0, 600.0),
        n_animals: 300,
        label_jitter_max_m: 3.0,
        seed: 8,
        ..SynthConfig::default()
    };
    let s = generate(&cfg).map_err(|e| e.to_string())?;
    let labeling = connected_components(&s.prediction, Connectivity::Eight).map_err(|e| e.to_string())?;
    let d: Vec<f64> = (1..=8).map(f64::from).collect();
    let reports = sensitivity_sweep(&labeling, &s.labels, &d).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for (mode, recall) in [
        (
            "conservative",
            reports.iter().map(|r| r.conservative.scores.recall).collect::<Vec<_>>(),
        ),
        (
            "optimistic",
            reports.iter().map(|r| r.optimistic.scores.recall).collect::<Vec<_>>(),
        ),
    ] {
        let rise = recall[2] - recall[0];
        let plateau = (recall[7] - recall[4]).abs();
        ensure(rise >= 0.20, || format!("{mode}: recall(3) - recall(1) = {rise:.3}"))?;
        ensure(plateau < 0.02, || {
            format!("{mode}: |recall(8) - recall(5)| = {plateau:.3}")
        })?;
        summary.push(format!("{mode} rise {rise:.3} plateau {plateau:.3}"));
    }
    Ok(summary.join("; "))
}

fn cell_size_curve_shape() -> Outcome {
    let cfg = SynthConfig {
        scene_size_m: (4096.0, 4096.0),
        resolution_m: 2.0,
        n_animals: 2000,
        blob_radius_px: 1,
        max_cutoff_m: 2.0,
        displacement_m: 200.0,
        prediction: PredictionForm::Density,
        seed: 9,
        ..SynthConfig::default()
    };
    let s = generate(&cfg).map_err(|e| e.to_string())?;
    let total = s.prediction.total();
    ensure((total - 2000.0).abs() < 1e-6, || format!("prediction mass {total}"))?;
    let inputs = SceneInputs {
        pred: s.prediction,
        labels: s.labels,
        valid_mask: None,
    };
    let rc = RunConfig {
        r_list: vec![64.0, 1024.0],
        ..RunConfig::new(Command::Gridmetrics, SourceKind::Density)
    };
    let rows = gridmetrics_scene(&inputs, &rc).map_err(|e| e.to_string())?;
    let r2 = |i: usize| {
        rows[i]
            .r_squared
            .ok_or_else(|| format!("R2 undefined at r={}", rc.r_list[i]))
    };
    let (small, large) = (r2(0)?, r2(1)?);
    ensure(large > small, || {
        format!("R2(1024) = {large:.3} not above R2(64) = {small:.3}")
    })?;
    Ok(format!("R2(64) = {small:.3}, R2(1024) = {large:.3}"))
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        n_animals: 60,
        label_jitter_max_m: 2.0,
        fp_rate: 0.1,
        fn_rate: 0.1,
        seed: 10,
        ..SynthConfig::default()
    };
    let s = generate(&cfg).map_err(|e| e.to_string())?;
    let pred_path = dir.path().join("prediction.tif");
    let labels_path = dir.path().join("labels.csv");
    write_raster(&pred_path, &s.prediction).map_err(|e| e.to_string())?;
    write_labels_csv(&labels_path, &s.labels).map_err(|e| e.to_string())?;

    let run = || -> Result<Vec<u8>, String> {
        let mut rc = RunConfig::new(Command::Evaluate, SourceKind::Segmentation);
        rc.pred = Some(pred_path.to_string_lossy().into_owned());
        rc.labels = Some(labels_path.to_string_lossy().into_owned());
        rc.seed = 10;
        let inputs = SceneInputs {
            pred: read_raster(&pred_path, RasterKind::Density).map_err(|e| e.to_string())?,
            labels: read_labels(&labels_path, rc.d).map_err(|e| e.to_string())?,
            valid_mask: None,
        };
        let report = evaluate_scene(&inputs, &rc).map_err(|e| e.to_string())?;
        to_json_bytes(&report).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "reports differ between runs".into())?;
    Ok(format!("{} byte reports identical", a.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("degenerate accounting", degenerate_accounting),
        ("matching oracle", matching_oracle),
        ("tp monotonicity in d", tp_monotonicity),
        ("mass conservation", mass_conservation),
        ("GAME(0) equals MAE", game_is_mae),
        ("GMAE per km2", gmae_normalization),
        ("R2 sanity", r_squared_sanity),
        ("recall vs cutoff shape", cutoff_curve_shape),
        ("R2 vs cell size shape", cell_size_curve_shape),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
