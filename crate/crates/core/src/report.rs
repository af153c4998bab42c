//! Per-scene and overview reports, built only from stored documents.
//!
//! Output is a pure function of store state: nothing here reads the clock,
//! and every collection is emitted in a fixed order, so regenerating a
//! report from the same store gives identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytics::builtin::{BLOBS, CLASSIFIER, CONTOURS, GMM_KNN, RPF};
use crate::analytics::classifier::LandClass;
use crate::engine::store::{AnalyticDocument, DocumentFilter, DocumentKey, DocumentStore};
use crate::engine::wheel::{SceneSummary, RGB_ARTIFACT, SCENE_SUMMARY_ARTIFACT};
use crate::error::{Error, Result};
use crate::grid::{trace_rings, Ring};
use crate::radiometry::RgbImage;
use crate::raster::Pixel;
use crate::scene::GeoTransform;

/// Number of entries in the overview.
pub const OVERVIEW_TOP: usize = 10;

const SECTION_ORDER: [&str; 5] = [CONTOURS, RPF, GMM_KNN, BLOBS, CLASSIFIER];

/// A scored anomalous region pulled out of a result body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyItem {
    pub scene_id: String,
    pub analytic_id: String,
    pub run_id: String,
    /// Position in the analytic's own list.
    pub item_id: usize,
    pub score: u32,
    pub pixel_set: Vec<Pixel>,
    pub geo_bounds: Option<[f64; 4]>,
}

/// Scored anomalies in a result document. Only reported RPF objects and
/// selected GMM-KNN clumps count; other analytics contribute nothing.
pub fn anomaly_items(doc: &AnalyticDocument) -> Vec<AnomalyItem> {
    if doc.is_error() {
        return Vec::new();
    }
    let (list, keep): (&str, fn(&Value) -> bool) = match doc.analytic_id.as_str() {
        CONTOURS => ("clusters", |_| true),
        RPF => ("objects", |v| v["reported"] == json!(true)),
        GMM_KNN => ("clumps", |v| v["selected"] == json!(true)),
        BLOBS => ("anomalies", |_| true),
        _ => return Vec::new(),
    };
    let Some(items) = doc.body.get(list).and_then(Value::as_array) else {
        return Vec::new();
    };
    items
        .iter()
        .enumerate()
        .filter(|(_, v)| keep(v))
        .filter_map(|(i, v)| {
            let score = v.get("score")?.as_u64()? as u32;
            let pixel_set: Vec<Pixel> = serde_json::from_value(v.get("pixel_set")?.clone()).ok()?;
            let geo_bounds = v.get("geo_bbox").and_then(|b| serde_json::from_value(b.clone()).ok());
            Some(AnomalyItem {
                scene_id: doc.scene_id.clone(),
                analytic_id: doc.analytic_id.clone(),
                run_id: doc.run_id.clone(),
                item_id: i,
                score,
                pixel_set,
                geo_bounds,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SectionStatus {
    Ok,
    Error,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub analytic_id: String,
    pub status: SectionStatus,
    pub document: Option<DocumentKey>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub analytic_id: String,
    pub item_id: usize,
    pub score: u32,
    /// Boundary rings in grid corner coordinates `(row, col)`.
    pub grid_rings: Vec<Ring>,
    /// The same rings as `[lon, lat]`, when the scene footprint is known.
    pub geo_rings: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub run_id: String,
    pub scene: Option<SceneSummary>,
    pub rgb_artifact: Option<String>,
    pub sections: Vec<ReportSection>,
    pub overlays: Vec<Overlay>,
}

fn summarize(analytic_id: &str, body: &Value) -> Value {
    let count = |key: &str, pred: &dyn Fn(&Value) -> bool| {
        body.get(key)
            .and_then(Value::as_array)
            .map_or(0, |a| a.iter().filter(|v| pred(v)).count())
    };
    let top = |key: &str| {
        body.get(key).and_then(Value::as_array).and_then(|a| {
            a.iter()
                .filter(|v| v.get("score").is_some_and(|s| !s.is_null()))
                .max_by_key(|v| v["score"].as_u64())
                .map(|v| v["score"].clone())
        })
    };
    match analytic_id {
        CONTOURS => json!({
            "clusters": count("clusters", &|_| true),
            "top_score": top("clusters"),
            "pca": body.get("pca"),
        }),
        RPF => json!({
            "s1_size": body.get("s1_size"),
            "s2_size": body.get("s2_size"),
            "objects": count("objects", &|_| true),
            "reported": count("objects", &|v| v["reported"] == json!(true)),
            "top_score": top("objects"),
        }),
        GMM_KNN => json!({
            "gmm": body.get("gmm").map(|g| json!({"k": g["k"], "converged": g["converged"], "loglik": g["loglik"]})),
            "clumps": count("clumps", &|_| true),
            "selected": count("clumps", &|v| v["selected"] == json!(true)),
        }),
        BLOBS => json!({
            "boundary_fraction": body.get("boundary_fraction"),
            "blob_count": body.get("blob_count"),
            "anomalies": count("anomalies", &|_| true),
            "top_score": top("anomalies"),
        }),
        CLASSIFIER => json!({
            "coverage": body.get("coverage"),
            "classified_pixels": body.get("classified_pixels"),
            "notes": body.get("notes"),
        }),
        _ => {
            let keys: Vec<&String> = body.as_object().map(|o| o.keys().collect()).unwrap_or_default();
            json!({ "keys": keys })
        }
    }
}

fn geo_of(summary: &Option<SceneSummary>) -> Option<GeoTransform> {
    summary
        .as_ref()
        .map(|s| GeoTransform::new(s.metadata.geo_bounds, s.rows, s.cols))
}

fn overlay_for(item: &AnomalyItem, geo: Option<&GeoTransform>) -> Overlay {
    let grid_rings = trace_rings(&item.pixel_set);
    let geo_rings = geo.map(|g| {
        grid_rings
            .iter()
            .map(|ring| {
                ring.iter()
                    .map(|&(r, c)| {
                        let (lon, lat) = g.to_geo(r, c);
                        [lon, lat]
                    })
                    .collect()
            })
            .collect()
    });
    Overlay {
        analytic_id: item.analytic_id.clone(),
        item_id: item.item_id,
        score: item.score,
        grid_rings,
        geo_rings,
    }
}

/// Collects the documents of one scene in one run into a report.
pub fn scene_report(store: &DocumentStore, scene_id: &str, run_id: &str) -> Result<SceneReport> {
    let docs = store.query(&DocumentFilter {
        scene_id: Some(scene_id.to_string()),
        run_id: Some(run_id.to_string()),
        ..Default::default()
    })?;
    if docs.is_empty() {
        return Err(Error::NotFound(format!("no documents for scene {scene_id} in run {run_id}")));
    }
    let scene: Option<SceneSummary> = store
        .get_artifact(run_id, scene_id, SCENE_SUMMARY_ARTIFACT)?
        .and_then(|b| serde_json::from_slice(&b).ok());
    let rgb_artifact = store
        .get_artifact(run_id, scene_id, RGB_ARTIFACT)?
        .map(|_| format!("artifacts/{run_id}/{scene_id}/{RGB_ARTIFACT}"));
    let geo = geo_of(&scene);

    let by_id: BTreeMap<&str, &AnalyticDocument> = docs.iter().map(|d| (d.analytic_id.as_str(), d)).collect();
    let mut ids: Vec<&str> = SECTION_ORDER.to_vec();
    ids.extend(by_id.keys().filter(|k| !SECTION_ORDER.contains(k)));
    let mut sections = Vec::new();
    let mut overlays = Vec::new();
    for id in ids {
        let section = match by_id.get(id) {
            None => ReportSection {
                analytic_id: id.to_string(),
                status: SectionStatus::NotRun,
                document: None,
                summary: Value::Null,
            },
            Some(d) if d.is_error() => ReportSection {
                analytic_id: id.to_string(),
                status: SectionStatus::Error,
                document: Some(d.key()),
                summary: json!({"stage": d.body.get("stage"), "message": d.body.get("message")}),
            },
            Some(d) => {
                overlays.extend(anomaly_items(d).iter().map(|item| overlay_for(item, geo.as_ref())));
                ReportSection {
                    analytic_id: id.to_string(),
                    status: SectionStatus::Ok,
                    document: Some(d.key()),
                    summary: summarize(id, &d.body),
                }
            }
        };
        sections.push(section);
    }
    Ok(SceneReport {
        scene_id: scene_id.to_string(),
        run_id: run_id.to_string(),
        scene,
        rgb_artifact,
        sections,
        overlays,
    })
}

/// GeoJSON feature collection of a report's overlays. Overlays without a
/// geographic footprint are left out.
pub fn overlays_geojson(report: &SceneReport) -> Value {
    let features: Vec<Value> = report
        .overlays
        .iter()
        .filter_map(|o| {
            let rings = o.geo_rings.as_ref()?;
            let closed: Vec<Vec<[f64; 2]>> = rings
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    if r.first() != r.last() {
                        r.push(r[0]);
                    }
                    r
                })
                .collect();
            Some(json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": closed},
                "properties": {
                    "scene_id": report.scene_id,
                    "run_id": report.run_id,
                    "analytic_id": o.analytic_id,
                    "item_id": o.item_id,
                    "score": o.score,
                },
            }))
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn overlay_color(analytic_id: &str) -> &'static str {
    match analytic_id {
        CONTOURS => "#ff3b30",
        RPF => "#ffcc00",
        GMM_KNN => "#34c759",
        BLOBS => "#00c7ff",
        _ => "#ff2dff",
    }
}

fn class_map_png(body: &Value) -> Option<Vec<u8>> {
    let rows = body.get("rows")?.as_u64()? as usize;
    let cols = body.get("cols")?.as_u64()? as usize;
    let labels = base64::engine::general_purpose::STANDARD
        .decode(body.get("labels_u8_base64")?.as_str()?)
        .ok()?;
    if labels.len() != rows * cols {
        return None;
    }
    let data = labels
        .iter()
        .flat_map(|&l| LandClass::from_code(l).map_or([0, 0, 0], LandClass::color))
        .collect();
    Some(
        RgbImage {
            width: cols,
            height: rows,
            data,
        }
        .to_png(),
    )
}

const STYLE: &str = "body{font-family:sans-serif;margin:2em;max-width:70em}\
table{border-collapse:collapse}td,th{border:1px solid #999;padding:.2em .5em;text-align:left}\
.view{position:relative;display:inline-block}.view img{image-rendering:pixelated;display:block}\
.view svg{position:absolute;left:0;top:0}.notrun{color:#888}.error{color:#b00}pre{white-space:pre-wrap}";

/// Self-contained HTML with the RGB composite and overlays inlined.
pub fn render_scene_html(report: &SceneReport, rgb_png: Option<&[u8]>, class_map_bodies: &BTreeMap<String, Value>) -> String {
    let b64 = |bytes: &[u8]| base64::engine::general_purpose::STANDARD.encode(bytes);
    let mut h = String::new();
    let title = format!("Scene {} / {}", report.scene_id, report.run_id);
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title><style>{STYLE}</style></head><body>\n<h1>{}</h1>\n",
        escape(&title),
        escape(&title)
    );
    if let Some(s) = &report.scene {
        let m = &s.metadata;
        let _ = write!(
            h,
            "<table><tr><th>acquired</th><td>{}</td></tr><tr><th>instrument</th><td>{:?}</td></tr>\
<tr><th>size</th><td>{} x {} x {} bands</td></tr><tr><th>valid pixels</th><td>{}</td></tr>\
<tr><th>sun elevation / azimuth</th><td>{} / {}</td></tr>\
<tr><th>bounds (W S E N)</th><td>{} {} {} {}</td></tr></table>\n",
            m.acquisition_date,
            m.instrument,
            s.rows,
            s.cols,
            m.band_centers_nm.len(),
            s.valid_pixels,
            m.sun_elevation_deg,
            m.sun_azimuth_deg,
            m.geo_bounds.west,
            m.geo_bounds.south,
            m.geo_bounds.east,
            m.geo_bounds.north
        );
    }
    if let (Some(png), Some(s)) = (rgb_png, &report.scene) {
        let scale = (600 / s.cols.max(1)).clamp(1, 8);
        let (w, hgt) = (s.cols * scale, s.rows * scale);
        let _ = write!(
            h,
            "<h2>RGB composite</h2>\n<div class=\"view\"><img width=\"{w}\" height=\"{hgt}\" alt=\"RGB composite\" src=\"data:image/png;base64,{}\">\
<svg width=\"{w}\" height=\"{hgt}\" viewBox=\"0 0 {} {}\">",
            b64(png),
            s.cols,
            s.rows
        );
        for o in &report.overlays {
            let mut d = String::new();
            for ring in &o.grid_rings {
                for (i, (r, c)) in ring.iter().enumerate() {
                    let _ = write!(d, "{}{} {} ", if i == 0 { "M" } else { "L" }, c, r);
                }
                d.push_str("Z ");
            }
            let _ = write!(
                h,
                "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"0.4\" fill-rule=\"evenodd\"><title>{} #{} score {}</title></path>",
                d.trim_end(),
                overlay_color(&o.analytic_id),
                escape(&o.analytic_id),
                o.item_id,
                o.score
            );
        }
        h.push_str("</svg></div>\n");
    }
    for s in &report.sections {
        let _ = write!(h, "<h2>{}</h2>\n", escape(&s.analytic_id));
        match s.status {
            SectionStatus::NotRun => h.push_str("<p class=\"notrun\">not run</p>\n"),
            SectionStatus::Error => {
                let _ = write!(
                    h,
                    "<p class=\"error\">failed</p><pre>{}</pre>\n",
                    escape(&serde_json::to_string_pretty(&s.summary).unwrap_or_default())
                );
            }
            SectionStatus::Ok => {
                if let Some(k) = &s.document {
                    let _ = write!(h, "<p>document <code>{}</code></p>\n", escape(&k.to_string()));
                }
                let _ = write!(
                    h,
                    "<pre>{}</pre>\n",
                    escape(&serde_json::to_string_pretty(&s.summary).unwrap_or_default())
                );
                let items: Vec<&Overlay> = report.overlays.iter().filter(|o| o.analytic_id == s.analytic_id).collect();
                if !items.is_empty() {
                    h.push_str("<table><tr><th>item</th><th>score</th></tr>");
                    for o in items {
                        let _ = write!(h, "<tr><td>{}</td><td>{}</td></tr>", o.item_id, o.score);
                    }
                    h.push_str("</table>\n");
                }
                if let Some(png) = class_map_bodies.get(&s.analytic_id).and_then(class_map_png) {
                    let _ = write!(
                        h,
                        "<p><img alt=\"class map\" style=\"image-rendering:pixelated;width:400px\" src=\"data:image/png;base64,{}\"></p>\n",
                        b64(&png)
                    );
                    h.push_str("<p>");
                    for c in LandClass::ALL {
                        let [r, g, b] = c.color();
                        let _ = write!(
                            h,
                            "<span style=\"background:rgb({r},{g},{b});border:1px solid #000\">&nbsp;&nbsp;&nbsp;</span> {} ",
                            c.name()
                        );
                    }
                    h.push_str("</p>\n");
                }
            }
        }
    }
    h.push_str("</body></html>\n");
    h
}

/// Paths written by [`write_scene_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct WrittenReport {
    pub json: PathBuf,
    pub html: PathBuf,
    pub overlays: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `reports/<run>/<scene>/report.{json,html}` and
/// `reports/<run>/overlays/<scene>.geojson` under `out_root`.
pub fn write_scene_report(store: &DocumentStore, out_root: &Path, scene_id: &str, run_id: &str) -> Result<WrittenReport> {
    let report = scene_report(store, scene_id, run_id)?;
    let rgb = store.get_artifact(run_id, scene_id, RGB_ARTIFACT)?;
    let mut class_maps = BTreeMap::new();
    if report.sections.iter().any(|s| s.analytic_id == CLASSIFIER && s.status == SectionStatus::Ok) {
        let doc = store.get(&DocumentKey {
            scene_id: scene_id.into(),
            analytic_id: CLASSIFIER.into(),
            run_id: run_id.into(),
        })?;
        class_maps.insert(CLASSIFIER.to_string(), doc.body);
    }
    let dir = out_root.join("reports").join(run_id).join(scene_id);
    let written = WrittenReport {
        json: dir.join("report.json"),
        html: dir.join("report.html"),
        overlays: out_root
            .join("reports")
            .join(run_id)
            .join("overlays")
            .join(format!("{scene_id}.geojson")),
    };
    write_file(&written.json, (serde_json::to_string_pretty(&report).expect("report serialises") + "\n").as_bytes())?;
    write_file(&written.html, render_scene_html(&report, rgb.as_deref(), &class_maps).as_bytes())?;
    write_file(
        &written.overlays,
        (serde_json::to_string_pretty(&overlays_geojson(&report)).expect("geojson serialises") + "\n").as_bytes(),
    )?;
    Ok(written)
}

/// Inclusive `produced_at` window; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeframe {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl Timeframe {
    /// The UTC calendar day containing `day`.
    pub fn day(day: chrono::NaiveDate) -> Self {
        let start = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        let end = start + chrono::Duration::days(1) - chrono::Duration::nanoseconds(1);
        Timeframe {
            from: Some(start),
            to: Some(end),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewEntry {
    pub scene_id: String,
    pub analytic_id: String,
    pub run_id: String,
    pub item_id: usize,
    pub score: u32,
    pub geo_bounds: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewReport {
    pub timeframe: Timeframe,
    pub run_id: Option<String>,
    pub scenes_covered: Vec<String>,
    pub anomalies_considered: usize,
    pub top_anomalies: Vec<OverviewEntry>,
    /// Scenes with a result document, per analytic.
    pub analytic_scene_counts: BTreeMap<String, usize>,
}

/// Score descending, then scene, analytic, run and item ascending.
pub fn overview_order(a: &OverviewEntry, b: &OverviewEntry) -> std::cmp::Ordering {
    b.score
        .cmp(&a.score)
        .then_with(|| a.scene_id.cmp(&b.scene_id))
        .then_with(|| a.analytic_id.cmp(&b.analytic_id))
        .then_with(|| a.run_id.cmp(&b.run_id))
        .then_with(|| a.item_id.cmp(&b.item_id))
}

/// Pools scored anomalies from every document in the window and keeps the
/// top ten.
pub fn overview_report(store: &DocumentStore, timeframe: Timeframe, run_id: Option<&str>) -> Result<OverviewReport> {
    let docs = store.query(&DocumentFilter {
        run_id: run_id.map(str::to_string),
        from: timeframe.from,
        to: timeframe.to,
        ..Default::default()
    })?;
    Ok(overview_from_documents(&docs, timeframe, run_id))
}

pub fn overview_from_documents(docs: &[AnalyticDocument], timeframe: Timeframe, run_id: Option<&str>) -> OverviewReport {
    let mut scenes = BTreeSet::new();
    let mut per_analytic: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    let mut entries = Vec::new();
    for d in docs {
        scenes.insert(d.scene_id.clone());
        if !d.is_error() {
            per_analytic.entry(d.analytic_id.clone()).or_default().insert(&d.scene_id);
        }
        entries.extend(anomaly_items(d).into_iter().map(|i| OverviewEntry {
            scene_id: i.scene_id,
            analytic_id: i.analytic_id,
            run_id: i.run_id,
            item_id: i.item_id,
            score: i.score,
            geo_bounds: i.geo_bounds,
        }));
    }
    let considered = entries.len();
    entries.sort_by(overview_order);
    entries.truncate(OVERVIEW_TOP);
    OverviewReport {
        timeframe,
        run_id: run_id.map(str::to_string),
        scenes_covered: scenes.into_iter().collect(),
        anomalies_considered: considered,
        top_anomalies: entries,
        analytic_scene_counts: per_analytic.into_iter().map(|(k, v)| (k, v.len())).collect(),
    }
}

pub fn render_overview_html(o: &OverviewReport) -> String {
    let fmt_time = |t: Option<DateTime<Utc>>| t.map_or("open".to_string(), |t| t.to_rfc3339());
    let mut h = String::new();
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Overview</title><style>{STYLE}</style></head><body>\n\
<h1>Overview</h1>\n<p>from {} to {}{}; {} scenes, {} scored anomalies</p>\n",
        escape(&fmt_time(o.timeframe.from)),
        escape(&fmt_time(o.timeframe.to)),
        o.run_id.as_ref().map_or(String::new(), |r| format!(", run {}", escape(r))),
        o.scenes_covered.len(),
        o.anomalies_considered
    );
    h.push_str("<h2>Top anomalies</h2>\n<table><tr><th>#</th><th>score</th><th>scene</th><th>analytic</th><th>item</th><th>bounds (W S E N)</th></tr>\n");
    for (i, e) in o.top_anomalies.iter().enumerate() {
        let bounds = e
            .geo_bounds
            .map_or(String::new(), |b| format!("{:.5} {:.5} {:.5} {:.5}", b[0], b[1], b[2], b[3]));
        let _ = write!(
            h,
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>\n",
            i + 1,
            e.score,
            escape(&e.scene_id),
            escape(&e.analytic_id),
            e.item_id,
            bounds
        );
    }
    h.push_str("</table>\n<h2>Scenes per analytic</h2>\n<table>");
    for (k, v) in &o.analytic_scene_counts {
        let _ = write!(h, "<tr><td>{}</td><td>{}</td></tr>", escape(k), v);
    }
    h.push_str("</table>\n</body></html>\n");
    h
}

/// Writes `reports/<run or "all">/overview.{json,html}` under `out_root`.
pub fn write_overview(store: &DocumentStore, out_root: &Path, timeframe: Timeframe, run_id: Option<&str>) -> Result<(OverviewReport, PathBuf)> {
    let report = overview_report(store, timeframe, run_id)?;
    let dir = out_root.join("reports").join(run_id.unwrap_or("all"));
    write_file(
        &dir.join("overview.json"),
        (serde_json::to_string_pretty(&report).expect("overview serialises") + "\n").as_bytes(),
    )?;
    write_file(&dir.join("overview.html"), render_overview_html(&report).as_bytes())?;
    Ok((report, dir))
}
