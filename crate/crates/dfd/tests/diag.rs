//! Scratch diagnostics; run explicitly with `cargo test --test diag -- --ignored --nocapture`.

use dfd::backbone::{Backbone, BackboneSpec};
use dfd::imagery::standardize;
use dfd::losses::pool_mask;
use dfd::pipeline::{score_image, train, TrainConfig};
use dfd::synth::fixture;

fn fixture_cfg(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.resolution = 64;
    cfg.shots = 2;
    cfg.n_augment = 16;
    cfg.epochs = 20;
    cfg.seed = seed;
    cfg
}

#[test]
#[ignore]
fn feature_space_separation() {
    let seed = 1u64;
    let bb = Backbone::from_spec(&BackboneSpec::random(seed)).unwrap();
    // normal cell statistics from train images
    let mut normal_feats: Vec<Vec<f32>> = Vec::new();
    for i in 0..2 {
        let (img, _) = fixture::normal_image(64, 0, seed, i).unwrap();
        let fm = bb.extract(&standardize(&img)).unwrap();
        for p in 0..fm.positions() {
            normal_feats.push(fm.data[p * fm.channels..(p + 1) * fm.channels].to_vec());
        }
    }
    let c = normal_feats[0].len();
    let n = normal_feats.len() as f32;
    let mut mean = vec![0.0f32; c];
    for f in &normal_feats {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0f32; c];
    for f in &normal_feats {
        for i in 0..c {
            var[i] += (f[i] - mean[i]).powi(2) / n;
        }
    }
    let spread = (var.iter().sum::<f32>() / c as f32).sqrt();
    let feat_scale =
        (normal_feats.iter().flatten().map(|v| v * v).sum::<f32>() / (n * c as f32)).sqrt();
    println!("feature rms {feat_scale:.4}, per-dim spread {spread:.4}");

    // defect vs normal cells on test images
    let dist = |f: &[f32]| -> f32 {
        let mut d = 0.0;
        for i in 0..c {
            d += (f[i] - mean[i]).powi(2);
        }
        (d / c as f32).sqrt()
    };
    let mut d_defect = Vec::new();
    let mut d_normal = Vec::new();
    for i in 0..5 {
        let (img, mask) = fixture::defective_image(64, 0, seed, 2000 + i).unwrap();
        let fm = bb.extract(&standardize(&img)).unwrap();
        let pooled = pool_mask(&mask, fm.grid_h, fm.grid_w).unwrap();
        for p in 0..fm.positions() {
            let f = &fm.data[p * fm.channels..(p + 1) * fm.channels];
            if pooled.data[p] != 0 {
                d_defect.push(dist(f));
            } else {
                d_normal.push(dist(f));
            }
        }
    }
    let avg = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
    println!(
        "distance-to-normal-mean: defect cells {:.4} ({} cells), normal cells {:.4} ({} cells), spread {spread:.4}",
        avg(&d_defect),
        d_defect.len(),
        avg(&d_normal),
        d_normal.len()
    );
    // naive AUROC of the distance itself as an anomaly score
    let mut scores: Vec<f64> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for &d in &d_defect {
        scores.push(d as f64);
        labels.push(1);
    }
    for &d in &d_normal {
        scores.push(d as f64);
        labels.push(0);
    }
    println!(
        "cell-level AUROC of plain feature distance: {:.4}",
        dfd::eval::auroc(&scores, &labels).unwrap()
    );
}

#[test]
#[ignore]
fn raw_score_behavior() {
    let seed = 1u64;
    let root = std::env::temp_dir().join("dfd_diag_fixture");
    let _ = std::fs::remove_dir_all(&root);
    let spec = fixture::FixtureSpec::default();
    fixture::generate_fixture(&root, &spec, seed).unwrap();
    let layout = dfd::eval::ingest_mvtec_layout(&root, "braid").unwrap();
    let shots: Vec<_> = layout.train_good[..2]
        .iter()
        .map(|p| dfd::imagery::load_image(p).unwrap())
        .collect();
    let cfg = fixture_cfg(seed);
    let out = train(&shots, &cfg).unwrap();
    println!("first loss lines:");
    for l in out.loss_log.lines().take(4) {
        println!("  {l}");
    }
    println!("last loss lines:");
    for l in out.loss_log.lines().rev().take(3) {
        println!("  {l}");
    }
    let mut normal_sa = Vec::new();
    let mut defect_sa = Vec::new();
    for rec in &layout.test {
        let img = dfd::imagery::load_image(&rec.image).unwrap();
        let (_, sa) = score_image(&img, &out.bundle).unwrap();
        if rec.label == 0 {
            normal_sa.push(sa);
        } else {
            defect_sa.push(sa);
        }
    }
    println!("normal S_A: {normal_sa:.3?}");
    println!("defect S_A: {defect_sa:.3?}");
}

#[test]
#[ignore]
fn feature_grid_alignment() {
    let bb = Backbone::from_spec(&BackboneSpec::random(3)).unwrap();
    let base = dfd::imagery::Image::constant(64, 64, 3, 0.5);
    let fm0 = bb.extract(&standardize(&base)).unwrap();
    // paint the top 8 rows red: only grid row 0 should move
    let mut top = base.clone();
    for y in 0..8 {
        for x in 0..64 {
            top.set(y, x, 0, 1.0);
            top.set(y, x, 1, 0.0);
            top.set(y, x, 2, 0.0);
        }
    }
    let fm1 = bb.extract(&standardize(&top)).unwrap();
    let c = fm0.channels;
    println!("grid {}x{}", fm0.grid_h, fm0.grid_w);
    for gy in 0..fm0.grid_h {
        let mut row_diff = 0.0f32;
        for gx in 0..fm0.grid_w {
            let p = gy * fm0.grid_w + gx;
            for i in 0..c {
                row_diff += (fm1.data[p * c + i] - fm0.data[p * c + i]).abs();
            }
        }
        println!("grid row {gy}: total abs diff {row_diff:.3}");
    }
    // and a centered square -> center cells
    let mut mid = base.clone();
    for y in 24..40 {
        for x in 24..40 {
            mid.set(y, x, 0, 1.0);
            mid.set(y, x, 1, 0.0);
            mid.set(y, x, 2, 0.0);
        }
    }
    let fm2 = bb.extract(&standardize(&mid)).unwrap();
    for gy in 0..8 {
        let mut line = String::new();
        for gx in 0..8 {
            let p = gy * 8 + gx;
            let mut d = 0.0f32;
            for i in 0..c {
                d += (fm2.data[p * c + i] - fm0.data[p * c + i]).abs();
            }
            line.push_str(&format!("{d:7.2} "));
        }
        println!("{line}");
    }
}

#[test]
#[ignore]
fn per_path_score_contrast() {
    use dfd::backbone::adapt;
    let seed = 1u64;
    let root = std::env::temp_dir().join("dfd_diag_fixture2");
    let _ = std::fs::remove_dir_all(&root);
    fixture::generate_fixture(&root, &fixture::FixtureSpec::default(), seed).unwrap();
    let layout = dfd::eval::ingest_mvtec_layout(&root, "braid").unwrap();
    let shots: Vec<_> = layout.train_good[..2]
        .iter()
        .map(|p| dfd::imagery::load_image(p).unwrap())
        .collect();
    let mut cfg = fixture_cfg(seed);
    cfg.aggregation = 1;
    let out = train(&shots, &cfg).unwrap();
    let b = &out.bundle;
    let w = &b.store.value(b.adaptor).data;

    let mut stats = vec![(0.0f64, 0usize, 0.0f64, 0usize); 2]; // per disc: (defect sum, n, normal sum, n)
    for rec in layout.test.iter().filter(|r| r.label == 1) {
        let img = dfd::imagery::load_image(&rec.image).unwrap();
        let gt = dfd::imagery::load_mask(rec.mask.as_ref().unwrap()).unwrap();
        let std_img = standardize(&dfd::imagery::resize(&img, 64, 64).unwrap());
        let (low, high) = b.backbone.extract_pair(&std_img).unwrap();
        let pooled = pool_mask(&gt, low.grid_h, low.grid_w).unwrap();
        let ql = adapt(&low, w).unwrap();
        let qh = adapt(&high, w).unwrap();
        for (di, scorer) in [&b.gauss.as_ref().map(|g| g as &dyn std::any::Any), &None::<&dyn std::any::Any>].iter().enumerate() {
            let _ = (di, scorer);
        }
        // gaussian raw
        if let Some(g) = &b.gauss {
            let sl = g.score(&b.store, &ql).unwrap();
            let sh = g.score(&b.store, &qh).unwrap();
            for p in 0..pooled.data.len() {
                let raw = (sl.data[p] + sh.data[p]) as f64;
                if pooled.data[p] != 0 {
                    stats[0].0 += raw;
                    stats[0].1 += 1;
                } else {
                    stats[0].2 += raw;
                    stats[0].3 += 1;
                }
            }
        }
        if let Some(pd) = &b.perlin {
            let sl = pd.score(&b.store, &ql).unwrap();
            let sh = pd.score(&b.store, &qh).unwrap();
            for p in 0..pooled.data.len() {
                let raw = (sl.data[p] + sh.data[p]) as f64;
                if pooled.data[p] != 0 {
                    stats[1].0 += raw;
                    stats[1].1 += 1;
                } else {
                    stats[1].2 += raw;
                    stats[1].3 += 1;
                }
            }
        }
    }
    for (name, s) in ["gaussian", "perlin"].iter().zip(&stats) {
        println!(
            "{name}: mean raw score at defect cells {:.4} ({}), normal cells {:.4} ({})  [positive = normal]",
            s.0 / s.1.max(1) as f64,
            s.1,
            s.2 / s.3.max(1) as f64,
            s.3
        );
    }
}
