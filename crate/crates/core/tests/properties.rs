use proptest::prelude::*;

use dingdate_core::catalog::{ArtifactRecord, Catalog};
use dingdate_core::dating::{decide, EmbeddingIndex, EmbeddingVector, Outcome};
use dingdate_core::detect::{postprocess, DetectionBox, PartLabel, RawBox};
use dingdate_core::evalbench::{
    build_testset, evaluate, parse_table, quotas, render_table, AccuracyReport, DatasetEntry, DatasetManifest, PeriodCounts,
    Prediction, Tally,
};
use dingdate_core::imageproc::{extract_feature_lines, gradient_magnitude, remove_background, Image};
use dingdate_core::nnx::ops::{layer_norm, softmax};
use dingdate_core::nnx::Tensor;
use dingdate_core::Period;
use dingdate_oracles as oracle;

fn period() -> impl Strategy<Value = Period> {
    (0..Period::COUNT).prop_map(|i| Period::from_index(i).unwrap())
}

fn label() -> impl Strategy<Value = PartLabel> {
    prop::sample::select(PartLabel::ALL.to_vec())
}

fn raw_box() -> impl Strategy<Value = RawBox> {
    let coord = prop_oneof![8 => -0.5f32..1.5, 1 => Just(f32::NAN), 1 => Just(0.5f32)];
    (label(), -0.2f32..1.2, coord.clone(), coord.clone(), coord.clone(), coord).prop_map(|(label, score, x0, y0, x1, y1)| RawBox {
        label,
        score,
        x0,
        y0,
        x1,
        y1,
    })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f32..50.0, 1..16), shift in -20.0f32..20.0) {
        let p = softmax(&v).unwrap();
        prop_assert!((p.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() <= 1e-5);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted: Vec<f32> = v.iter().map(|x| x + shift).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-4);
        }
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] > v[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn layer_norm_standardizes(rows in 1usize..4, v in prop::collection::vec(-10.0f32..10.0, 4..24)) {
        let d = v.len();
        let data: Vec<f32> = (0..rows).flat_map(|r| v.iter().map(move |x| x * (r as f32 + 1.0))).collect();
        let mean = v.iter().sum::<f32>() / d as f32;
        prop_assume!(v.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / d as f32 > 1e-2);
        let x = Tensor::new(vec![rows, d], data).unwrap();
        let y = layer_norm(&x, &Tensor::new(vec![d], vec![1.0; d]).unwrap(), &Tensor::zeros(vec![d]), 1e-6).unwrap();
        for row in y.data().chunks(d) {
            let m = row.iter().map(|&x| x as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / d as f64;
            prop_assert!(m.abs() < 1e-4);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn postprocess_invariants(raw in prop::collection::vec(raw_box(), 0..30), threshold in 0.0f32..1.0, max in 1usize..12) {
        let out = postprocess(&raw, threshold, max);
        prop_assert!(out.len() <= max);
        prop_assert!(out.iter().all(DetectionBox::is_valid));
        prop_assert!(out.iter().all(|b| b.score >= threshold));
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        let again: Vec<RawBox> = out.iter().map(DetectionBox::to_raw).collect();
        prop_assert_eq!(postprocess(&again, threshold, max), out.clone());
        let mut reversed = raw.clone();
        reversed.reverse();
        prop_assert_eq!(postprocess(&reversed, threshold, max), out);
    }

    #[test]
    fn decide_respects_gate_and_ordering(weights in prop::collection::vec(0.0f32..1.0, 11), mass in 0.0f32..=1.0) {
        let total: f32 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let p: Vec<f32> = weights.iter().map(|w| w / total * mass * 0.9999).collect();
        let d = decide(&p).unwrap();
        let max = p.iter().cloned().fold(0.0f32, f32::max);
        prop_assert_eq!(d.top1_probability, max);
        if max < 0.05 {
            prop_assert_eq!(d.outcome, Outcome::OtherStuffs);
            prop_assert!(d.ranked.is_empty());
        } else {
            prop_assert_eq!(d.outcome, Outcome::Dated);
            prop_assert_eq!(d.ranked.len(), 4);
            prop_assert_eq!(d.ranked[0].probability, max);
            prop_assert!(d.ranked.windows(2).all(|w| w[0].probability > w[1].probability
                || (w[0].probability == w[1].probability && w[0].period < w[1].period)));
        }
        prop_assert_eq!(decide(&p).unwrap(), d);
    }

    #[test]
    fn edge_maps_shrink_as_threshold_rises(seed in any::<u64>(), t1 in 0.0f32..400.0, t2 in 0.0f32..400.0) {
        let mut rng = oracle::SplitMix::new(seed);
        let (w, h) = (rng.range(2, 14) as u32, rng.range(2, 14) as u32);
        let img = Image::new(w, h, 1, (0..w * h).map(|_| rng.range(0, 255) as u8).collect()).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let a = extract_feature_lines(&img, lo).unwrap();
        let b = extract_feature_lines(&img, hi).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(&x, &y)| y <= x));
        let mag = gradient_magnitude(&img).unwrap();
        let want = oracle::sobel(img.data(), w as usize, h as usize);
        prop_assert!(oracle::max_abs_diff(&mag, &want) < 1e-3);
    }

    #[test]
    fn flood_fill_matches_relaxation(seed in any::<u64>(), tol in 0u8..60) {
        let mut rng = oracle::SplitMix::new(seed);
        let (w, h) = (rng.range(1, 12) as u32, rng.range(1, 12) as u32);
        let levels = [10u8, 30, 200];
        let px: Vec<u8> = (0..w * h * 3).map(|_| levels[rng.range(0, 2)]).collect();
        let img = Image::new(w, h, 3, px.clone()).unwrap();
        let (out, mask) = remove_background(&img, tol).unwrap();
        let want = oracle::corner_flood_mask(&px, w as usize, h as usize, 3, tol);
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                prop_assert_eq!(mask.get(x, y), want[i]);
                if want[i] {
                    prop_assert_eq!(out.pixel(x, y), &[255u8, 255, 255][..]);
                } else {
                    prop_assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn quotas_are_near_uniform(total in 0usize..5000) {
        let q = quotas(total);
        prop_assert_eq!(q.total(), total);
        let (lo, hi) = (q.0.iter().min().unwrap(), q.0.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert!(q.0.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn testset_is_a_stratified_subset(per in prop::collection::vec(30usize..60, 11), total in 0usize..300, seed in any::<u64>()) {
        let entries: Vec<DatasetEntry> = Period::ALL
            .iter()
            .zip(&per)
            .flat_map(|(&p, &n)| (0..n).map(move |i| DatasetEntry { image_ref: format!("{p}-{i}.jpg"), period: p }))
            .collect();
        let manifest = DatasetManifest::new(entries).unwrap();
        let a = build_testset(&manifest, total, seed).unwrap();
        prop_assert_eq!(a.counts(), quotas(total));
        let all: std::collections::HashSet<_> = manifest.entries().iter().collect();
        prop_assert!(a.entries().iter().all(|e| all.contains(e)));
        let unique: std::collections::HashSet<_> = a.entries().iter().map(|e| &e.image_ref).collect();
        prop_assert_eq!(unique.len(), a.len());
        prop_assert_eq!(build_testset(&manifest, total, seed).unwrap(), a);
    }

    #[test]
    fn evaluation_ignores_order_and_width(guesses in prop::collection::vec((period(), any::<bool>(), any::<bool>()), 1..80), rot in 0usize..80, width in 1usize..9) {
        let entries: Vec<DatasetEntry> = guesses
            .iter()
            .enumerate()
            .map(|(i, (p, _, _))| DatasetEntry { image_ref: format!("img{i}.png"), period: *p })
            .collect();
        let predict = |e: &DatasetEntry| {
            let i: usize = e.image_ref[3..e.image_ref.len() - 4].parse().unwrap();
            let (p, hit, other) = guesses[i];
            Ok(match (hit, other) {
                (true, _) => Prediction::Dated(p),
                (false, true) => Prediction::OtherStuffs,
                (false, false) => Prediction::Dated(Period::from_index((p.index() + 1) % Period::COUNT).unwrap()),
            })
        };
        let base = evaluate(predict, &DatasetManifest::new(entries.clone()).unwrap(), 1).unwrap();
        let mut rotated = entries;
        let n = rotated.len();
        rotated.rotate_left(rot % n);
        let other = evaluate(predict, &DatasetManifest::new(rotated).unwrap(), width).unwrap();
        prop_assert_eq!(&base, &other);
        prop_assert_eq!(base.overall.correct, guesses.iter().filter(|g| g.1).count());
    }

    #[test]
    fn rendered_table_parses_back(cells in prop::collection::vec((0usize..60, 1usize..60), 11), counts in prop::collection::vec(0usize..2000, 11)) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let tallies = Period::ALL.iter().zip(&cells).map(|(&p, &(c, t))| (p, Tally { correct: c.min(t), total: t }));
        let report = AccuracyReport::from_tallies(tallies, PeriodCounts(counts.clone().try_into().unwrap()));
        let parsed = parse_table(&render_table(&report)).unwrap();
        let total: usize = counts.iter().sum();
        prop_assert_eq!(parsed.dataset_total, total);
        for (i, p) in Period::ALL.iter().enumerate() {
            let t = report.per_period[p];
            prop_assert_eq!(parsed.accuracy_hundredths[i], Some(t.correct * 10_000 / t.total));
            let tenths = ((counts[i] as f64 / total as f64) * 1000.0 + 0.5).floor() as usize;
            prop_assert!(parsed.number_tenths[i].abs_diff(tenths) <= 1);
        }
        prop_assert_eq!(parsed.overall_hundredths, report.overall.accuracy_hundredths());
    }

    #[test]
    fn manifest_round_trips(records in prop::collection::vec((period(), "[\\PC\t\n\\\\]{0,12}", any::<bool>(), 0usize..3), 1..8)) {
        let mut catalog = Catalog::new();
        for (i, (p, text, with_emb, nboxes)) in records.iter().enumerate() {
            catalog.register_artifact(ArtifactRecord {
                id: format!("ding-{i}"),
                period: *p,
                shape: text.clone(),
                literature: format!("{text}/lit"),
                excavation: String::new(),
                museum: "博物馆".into(),
                image_ref: format!("{:064x}.jpg", i),
                embedding: with_emb.then(|| EmbeddingVector::new(vec![i as f32 + 1.0, 0.25, -0.5]).unwrap()),
                feature_boxes: (0..*nboxes)
                    .map(|k| DetectionBox { label: PartLabel::ALL[k], score: 0.1 + k as f32 / 7.0, coords: [0.1, 0.2, 0.3 + k as f32 / 9.0, 0.9] })
                    .collect(),
            }).unwrap();
        }
        let index = catalog.embedding_index().unwrap();
        let text = catalog.to_manifest("embeddings.idx");
        let back = Catalog::parse_manifest(&text, |_| Ok(EmbeddingIndex::from_bytes(&index.to_bytes()).unwrap())).unwrap();
        prop_assert_eq!(back, catalog);
    }
}
