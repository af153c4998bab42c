use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scanwheel::analytics::blobs::{run_blobs, BlobsConfig, BOUNDARY, NODATA};
use scanwheel::analytics::builtin::build_registry;
use scanwheel::analytics::classifier::{
    add_region, classify_scene, train_classifier, LandClass, PixelRect, TrainParams, TrainingSet, DEFAULT_RATIO_CAP,
};
use scanwheel::analytics::contours::{run_contours, ContoursConfig};
use scanwheel::analytics::gmm_knn::{run_gmm_knn, GmmKnnConfig};
use scanwheel::analytics::rpf::{run_rpf, RpfInput, RpfParams, RpfTransform};
use scanwheel::engine::store::{DocumentFilter, DocumentStore};
use scanwheel::engine::wheel::{run_wheel, WheelOptions};
use scanwheel::engine::WheelConfig;
use scanwheel::grid::{label_components, UNLABELED};
use scanwheel::radiometry::{default_ali_intervals, log_color_projection, to_reflectance, PreparedScene};
use scanwheel::raster::Cube;
use scanwheel::report::scene_report;
use scanwheel::scene::{load_scene, validate_scene, write_scene, Instrument, Scene};
use scanwheel::synth::{
    even_centers, generate, synthesize, AnomalySpectrum, Layout, PlantedAnomaly, SceneRecipe, Shape, ShiftProfile,
};

fn small_scene(seed: u64, rows: usize, cols: usize, bands: usize) -> Scene {
    let recipe = SceneRecipe {
        scene_id: format!("p{seed}"),
        rows,
        cols,
        band_centers_nm: even_centers(bands, 420.0, 2400.0),
        instrument: Instrument::Synthetic,
        layout: Layout::Quadrants {
            classes: [LandClass::Water, LandClass::Desert, LandClass::Vegetation, LandClass::Cloud],
        },
        anomalies: vec![PlantedAnomaly {
            shape: Shape::Blob { center: [rows / 3, cols / 3], size: 8 },
            spectrum: AnomalySpectrum::Shift { sigma: 10.0, profile: ShiftProfile::Sine },
            halo_sigma: None,
        }],
        noise_sigma: 0.01,
        seed,
        ..Default::default()
    };
    synthesize(&recipe).unwrap().0
}

/// Canonical relabelling: first occurrence in row-major order gets 0, 1, ...
fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            if l == UNLABELED {
                return UNLABELED;
            }
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn transpose<T: Copy>(v: &[T], rows: usize, cols: usize) -> Vec<T> {
    (0..rows * cols).map(|i| v[(i % rows) * cols + i / rows]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_survive_transposition(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.6)).collect();
        let direct = label_components(&mask, rows, cols);
        let t = label_components(&transpose(&mask, rows, cols), cols, rows);
        let back = transpose(&t.labels, cols, rows);
        prop_assert_eq!(direct.count, t.count);
        // same partition: pairs agree on "same label"
        let (a, b) = (canonical(&direct.labels), back);
        for p in 0..rows * cols {
            for q in p + 1..rows * cols {
                if a[p] != UNLABELED && a[q] != UNLABELED {
                    prop_assert_eq!(a[p] == a[q], b[p] == b[q]);
                }
            }
        }
    }

    #[test]
    fn blobs_and_boundary_tile_the_unmasked_grid(seed in any::<u64>(), rows in 4usize..16, cols in 4usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bands = 3;
        let mut cube = Cube::<f64>::zeros(bands, rows, cols);
        for b in 0..bands {
            for v in cube.band_mut(b) {
                *v = if rng.random_bool(0.5) { rng.random() } else { 1.0 };
            }
        }
        let mask: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.1)).collect();
        let (out, cat) = run_blobs(&cube, &mask, None, &BlobsConfig::default()).unwrap();
        prop_assert_eq!(out.blob_count, cat.blobs.len());
        let mut owner = vec![None; rows * cols];
        for blob in &cat.blobs {
            let set: Vec<bool> = (0..rows * cols).map(|p| blob.pixels.binary_search(&p).is_ok()).collect();
            prop_assert_eq!(label_components(&set, rows, cols).count, 1, "blob {} not 4-connected", blob.blob_id);
            for &p in &blob.pixels {
                prop_assert!(owner[p].is_none());
                owner[p] = Some(blob.blob_id);
                prop_assert_eq!(cat.label_grid[p], blob.blob_id as u32);
            }
        }
        for p in 0..rows * cols {
            match (mask[p], owner[p]) {
                (true, None) => prop_assert_eq!(cat.label_grid[p], NODATA),
                (false, None) => prop_assert_eq!(cat.label_grid[p], BOUNDARY),
                (false, Some(_)) => {}
                (true, Some(_)) => prop_assert!(false, "masked pixel {} in a blob", p),
            }
        }
        let grouped: BTreeSet<usize> = out.merge_groups.iter().flatten().copied().collect();
        prop_assert_eq!(grouped, (0..cat.blobs.len()).collect::<BTreeSet<_>>());
    }

    #[test]
    fn validation_never_unmasks(seed in any::<u64>()) {
        let mut scene = small_scene(seed % 1000, 12, 12, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in 0..scene.pixels() {
            if rng.random_bool(0.1) {
                scene.nodata[p] = true;
            }
            if rng.random_bool(0.05) {
                let b = rng.random_range(0..scene.band_count());
                let v = [f32::NAN, 0.0, -3.0, f32::INFINITY][rng.random_range(0..4)];
                scene.radiance.set(b, p / scene.cols, p % scene.cols, v);
            }
        }
        let before = scene.nodata.clone();
        validate_scene(&mut scene);
        for p in 0..before.len() {
            prop_assert!(!before[p] || scene.nodata[p]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn rpf_stages_nest_and_ignore_band_order(seed in 0u64..10_000) {
        let scene = small_scene(seed, 40, 40, 12);
        let params = RpfParams { p3: 1, p5: 1, ..Default::default() };
        let input = RpfInput::from_scene(&scene, None, RpfTransform::Radiance).unwrap();
        let trace = run_rpf(&input, None, &params).unwrap();
        let s1: BTreeSet<usize> = trace.s1.pixels.iter().copied().collect();
        let s2: BTreeSet<usize> = trace.s2.iter().copied().collect();
        prop_assert!(s2.is_subset(&s1));
        prop_assert!(s1.iter().all(|&p| !input.mask[p]));
        for c in &trace.clusters {
            prop_assert!(c.iter().all(|p| s2.contains(p)));
        }
        let frac = trace.output.s1_size as f64 / trace.output.valid_pixels as f64;
        prop_assert!((0.001..=0.005).contains(&frac));
        for o in trace.output.objects.iter().filter(|o| o.reported) {
            prop_assert!((params.p3..=params.p4).contains(&o.pixel_set.len()));
            prop_assert!(o.bbox_rows >= params.p5 && o.bbox_cols >= params.p5);
        }

        let mut order: Vec<usize> = (0..input.values.bands()).collect();
        order.reverse();
        let mut permuted = input.clone();
        for (i, &b) in order.iter().enumerate() {
            permuted.values.band_mut(i).copy_from_slice(input.values.band(b));
        }
        let t2 = run_rpf(&permuted, None, &params).unwrap();
        prop_assert_eq!(&trace.s1.pixels, &t2.s1.pixels);
        prop_assert_eq!(&trace.s2, &t2.s2);
        let sets = |t: &scanwheel::analytics::rpf::RpfTrace| {
            t.output.objects.iter().map(|o| (o.pixel_set.clone(), o.reported)).collect::<Vec<_>>()
        };
        prop_assert_eq!(sets(&trace), sets(&t2));
        for (a, b) in trace.output.objects.iter().zip(&t2.output.objects) {
            prop_assert!((a.mean_mahalanobis - b.mean_mahalanobis).abs() <= 1e-6 * a.mean_mahalanobis.abs());
        }
    }

    #[test]
    fn clumps_are_disjoint_and_hold_their_seeds(seed in 0u64..10_000) {
        let scene = small_scene(seed, 40, 40, 12);
        let cube = log_color_projection(&scene);
        let cfg = GmmKnnConfig { gmm: scanwheel::analytics::gmm_knn::GmmConfig { k: 4, ..Default::default() }, ..Default::default() };
        let (out, _) = run_gmm_knn(&cube, None, &cfg, seed).unwrap();
        let mut seen = BTreeSet::new();
        for c in &out.clumps {
            let members: BTreeSet<_> = c.pixel_set.iter().copied().collect();
            prop_assert!(c.seed_pixels.iter().all(|s| members.contains(s)));
            for p in &c.pixel_set {
                prop_assert!(seen.insert(*p), "pixel {:?} in two clumps", p);
            }
        }
    }

    #[test]
    fn contour_ranking_ignores_reflectance_scale(seed in 0u64..10_000, c in 0.25f64..4.0) {
        let scene = small_scene(seed, 30, 30, 10);
        let geo = scene.geo();
        let refl = to_reflectance(&scene).unwrap();
        let mut scaled = refl.clone();
        scaled.values = refl.values.map(|v| v * c);
        let a = run_contours(&refl, &geo, &ContoursConfig::default(), seed).unwrap();
        let b = run_contours(&scaled, &geo, &ContoursConfig::default(), seed).unwrap();
        let ranked = |o: &scanwheel::analytics::contours::ContoursOutput| {
            o.clusters.iter().map(|c| (c.rank, c.pixel_set.clone())).collect::<Vec<_>>()
        };
        prop_assert_eq!(ranked(&a), ranked(&b));
        for cl in &a.clusters {
            prop_assert!(cl.score <= 1000);
        }
        if let Some(top) = a.clusters.iter().find(|c| c.rank == 1) {
            prop_assert!(a.clusters.iter().all(|c| c.score <= top.score));
        }
    }
}

#[test]
fn scene_bundle_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = SceneRecipe { scene_id: "rt".into(), rows: 9, cols: 7, ..Default::default() };
    generate(&recipe, dir.path()).unwrap();
    let src = dir.path().join("rt");
    let copy = dir.path().join("copy");
    write_scene(&load_scene(&src).unwrap(), &copy).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(&copy).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > recipe.band_centers_nm.len());
    for name in names {
        assert_eq!(std::fs::read(src.join(&name)).unwrap(), std::fs::read(copy.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn rerunning_the_wheel_adds_nothing() {
    let batch = tempfile::tempdir().unwrap();
    let root = tempfile::tempdir().unwrap();
    for i in 0..2u64 {
        let recipe = SceneRecipe {
            scene_id: format!("idem-{i}"),
            rows: 24,
            cols: 24,
            band_centers_nm: even_centers(16, 420.0, 2400.0),
            instrument: Instrument::Synthetic,
            seed: i,
            ..Default::default()
        };
        generate(&recipe, batch.path()).unwrap();
    }
    let store = DocumentStore::open(root.path()).unwrap();
    let reg = build_registry(&WheelConfig::default()).unwrap();
    let first = run_wheel(batch.path(), &reg, &store, &WheelOptions::default()).unwrap();
    assert_eq!(first.scenes_processed, 2);
    let count = store.query(&DocumentFilter::default()).unwrap().len();
    let second = run_wheel(batch.path(), &reg, &store, &WheelOptions::default()).unwrap();
    assert_eq!(second.scenes_processed, 0);
    assert_eq!(second.documents_written, 0);
    assert_eq!(store.query(&DocumentFilter::default()).unwrap().len(), count);

    // every overlay lies inside its scene grid
    for i in 0..2 {
        let scene = format!("idem-{i}");
        let report = scene_report(&store, &scene, &first.run_id).unwrap();
        for o in &report.overlays {
            for ring in &o.grid_rings {
                assert!(ring.iter().all(|&(r, c)| (0.0..=24.0).contains(&r) && (0.0..=24.0).contains(&c)));
            }
        }
    }
}

#[test]
fn swapped_bands_break_archetype_classification() {
    let prepared = |class: LandClass, seed: u64, swap: bool| {
        let recipe = SceneRecipe {
            scene_id: format!("sw-{seed}"),
            rows: 16,
            cols: 16,
            layout: Layout::Uniform { class },
            seed,
            ..Default::default()
        };
        let mut scene = synthesize(&recipe).unwrap().0;
        if swap {
            // present the scene's bands in reverse wavelength order
            let n = scene.band_count();
            let orig = scene.radiance.clone();
            for b in 0..n {
                scene.radiance.band_mut(b).copy_from_slice(orig.band(n - 1 - b));
            }
        }
        PreparedScene::new(scene, default_ali_intervals()).unwrap()
    };
    let mut ts = TrainingSet::from_samples(Vec::new());
    for (i, class) in LandClass::ALL.into_iter().enumerate() {
        let p = prepared(class, i as u64, false);
        add_region(&mut ts, &p, PixelRect { row: 0, col: 0, height: 16, width: 16 }, class, DEFAULT_RATIO_CAP).unwrap();
    }
    let model = train_classifier(&ts, &TrainParams::default()).unwrap();
    let good = classify_scene(&prepared(LandClass::Vegetation, 40, false), &model).unwrap();
    let bad = classify_scene(&prepared(LandClass::Vegetation, 40, true), &model).unwrap();
    assert!(good.coverage_of(LandClass::Vegetation) > 0.99);
    assert!(bad.coverage_of(LandClass::Vegetation) < 0.5, "{:?}", bad.coverage);
    let again = classify_scene(&prepared(LandClass::Vegetation, 40, false), &model).unwrap();
    assert_eq!(good.labels, again.labels);
}
