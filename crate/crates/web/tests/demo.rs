use serde_json::Value;

use scanwheel_web::{demo_recipe, DemoScene};

#[test]
fn rare_pixels_finds_planted_blobs() {
    let scene = DemoScene::build(128, 128, "desert", 10.0, 4).unwrap();
    let v: Value = serde_json::from_str(&scene.rare_pixels_json(6.0).unwrap()).unwrap();
    let objects = v["objects"].as_array().unwrap();
    assert!(!objects.is_empty(), "{v}");
    assert!(objects.iter().all(|o| o["planted_share"].as_f64().unwrap() > 0.5), "{v}");
}

#[test]
fn blobs_report_the_foreign_patch() {
    let scene = DemoScene::build(64, 64, "quadrants", 10.0, 2).unwrap();
    let v: Value = serde_json::from_str(&scene.blobs_json(0.2, 25).unwrap()).unwrap();
    let anomalies = v["anomalies"].as_array().unwrap();
    assert!(anomalies.iter().any(|a| a["planted_share"].as_f64().unwrap() == 1.0), "{v}");
}

#[test]
fn land_cover_tracks_truth() {
    let mut scene = DemoScene::build(48, 48, "split", 10.0, 1).unwrap();
    let (rgba, summary) = scene.classify().unwrap();
    assert_eq!(rgba.len(), 48 * 48 * 4);
    let v: Value = serde_json::from_str(&summary).unwrap();
    for row in v["coverage"].as_array().unwrap() {
        let (got, want) = (row["classified"].as_f64().unwrap(), row["truth"].as_f64().unwrap());
        // planted anomalies are scored against their background class
        assert!((got - want).abs() < 0.05, "{row}");
    }
    assert_eq!(scene.rgba().len(), 48 * 48 * 4);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(demo_recipe(10, 64, "desert", 8.0, 0).is_err());
    assert!(demo_recipe(64, 64, "lava", 8.0, 0).is_err());
}
