//! Retrieval evaluation over detected boxes.
//!
//! Each test caption is a query. The gallery is every box the detector keeps
//! in the test scenes; a ranked box counts as a hit when it overlaps an
//! unclaimed annotation of the query's identity. CMC and mAP follow.

mod gallery;
mod metrics;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gallery::{build_gallery, scene_detections, DetectorStats, GalleryEntry};
pub use metrics::{
    average_precision, cmc, match_ranked_boxes, mean_ap, rank_by_similarity, GroundTruth,
    PlacedBox, QueryResult,
};

use crate::boxes::Detector;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tpan::TpsModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub ranks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            score_thresh: 0.5,
            nms_thresh: 0.7,
            ranks: vec![1, 5, 10],
        }
    }
}

/// A text query with its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: usize,
    pub identity: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcPoint {
    pub rank: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query: usize,
    pub identity: usize,
    pub num_relevant: usize,
    /// Absent for excluded queries.
    pub ap: Option<f64>,
    pub first_hit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub iou_thresh: f64,
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub similarity: String,
    pub tie_break: String,
    pub matching: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub cmc: Vec<CmcPoint>,
    pub num_queries: usize,
    pub num_valid_queries: usize,
    pub excluded_queries: usize,
    pub gallery_size: usize,
    pub detector: DetectorStats,
    pub protocol: Protocol,
    pub per_query: Vec<QueryScore>,
}

impl EvalReport {
    pub fn cmc_at(&self, rank: usize) -> Option<f64> {
        self.cmc.iter().find(|p| p.rank == rank).map(|p| p.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn summary(&self) -> String {
        let cmc: Vec<String> = self
            .cmc
            .iter()
            .map(|p| format!("R{}={:.4}", p.rank, p.value))
            .collect();
        format!(
            "mAP={:.4} {} queries={} (excluded {}) gallery={}",
            self.map,
            cmc.join(" "),
            self.num_valid_queries,
            self.excluded_queries,
            self.gallery_size
        )
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub results: Vec<QueryResult>,
    pub gallery: Vec<GalleryEntry>,
}

/// Ground-truth boxes of every labelled person in `data`.
pub fn ground_truths(data: &Dataset) -> Vec<GroundTruth> {
    data.boxes
        .iter()
        .enumerate()
        .flat_map(|(scene, bs)| {
            bs.iter().filter_map(move |b| {
                b.identity.map(|identity| GroundTruth {
                    scene,
                    bbox: *b,
                    identity,
                })
            })
        })
        .collect()
}

/// Ranks the gallery for one query and marks the hits.
pub fn score_query(
    query: &Query,
    gallery: &[GalleryEntry],
    gts: &[GroundTruth],
    iou_thresh: f64,
) -> QueryResult {
    let sims: Vec<f64> = gallery
        .iter()
        .map(|g| g.embedding.iter().zip(&query.embedding).map(|(a, b)| a * b).sum())
        .collect();
    let ranking = rank_by_similarity(&sims);
    let placed: Vec<PlacedBox> = ranking
        .iter()
        .map(|&i| PlacedBox {
            scene: gallery[i].scene,
            bbox: gallery[i].detection.bbox,
        })
        .collect();
    let (correct, num_relevant) = match_ranked_boxes(&placed, gts, query.identity, iou_thresh);
    QueryResult {
        query: query.id,
        identity: query.identity,
        similarities: ranking.iter().map(|&i| sims[i]).collect(),
        ranking,
        correct,
        num_relevant,
    }
}

/// Scores precomputed query and gallery embeddings.
pub fn evaluate_embeddings(
    queries: &[Query],
    gallery: Vec<GalleryEntry>,
    gts: &[GroundTruth],
    detector: DetectorStats,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<Evaluation> {
    let results = exec.map(queries, |q| score_query(q, &gallery, gts, cfg.iou_thresh));
    let values = cmc(&results, &cfg.ranks)?;
    let map = mean_ap(&results)?;
    let num_valid = results.iter().filter(|r| r.is_valid()).count();
    let report = EvalReport {
        map,
        cmc: cfg
            .ranks
            .iter()
            .zip(values)
            .map(|(&rank, value)| CmcPoint { rank, value })
            .collect(),
        num_queries: results.len(),
        num_valid_queries: num_valid,
        excluded_queries: results.len() - num_valid,
        gallery_size: gallery.len(),
        detector,
        protocol: Protocol {
            iou_thresh: cfg.iou_thresh,
            score_thresh: cfg.score_thresh,
            nms_thresh: cfg.nms_thresh,
            similarity: "cosine".into(),
            tie_break: "lower gallery index first".into(),
            matching: "greedy down the ranking, each annotation claimed once".into(),
        },
        per_query: results
            .iter()
            .map(|r| QueryScore {
                query: r.query,
                identity: r.identity,
                num_relevant: r.num_relevant,
                ap: r.average_precision(),
                first_hit: r.first_hit(),
            })
            .collect(),
    };
    Ok(Evaluation {
        report,
        results,
        gallery,
    })
}

/// Full protocol on one split: gallery from `detector`, one query per caption.
pub fn evaluate(
    model: &TpsModel,
    data: &Dataset,
    detector: &dyn Detector,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<Evaluation> {
    let (gallery, stats) = build_gallery(model, &data.scenes, &data.boxes, detector, cfg, exec)?;
    let queries = exec
        .map(&data.captions, |c| model.embed_text(&c.tokens))
        .into_iter()
        .zip(&data.captions)
        .enumerate()
        .map(|(id, (e, c))| {
            Ok(Query {
                id,
                identity: c.identity,
                embedding: e?.into_data(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_embeddings(&queries, gallery, &ground_truths(data), stats, cfg, exec)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    std::fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        locus: path.display().to_string(),
        message: e.to_string(),
    })
}

/// `query,rank,scene,x,y,w,h,similarity,correct`, one row per ranked box.
pub fn rankings_csv(eval: &Evaluation, top_k: Option<usize>) -> String {
    let mut out = String::from("query,rank,scene,x,y,w,h,similarity,correct\n");
    for r in &eval.results {
        let n = top_k.unwrap_or(r.ranking.len()).min(r.ranking.len());
        for pos in 0..n {
            let g = &eval.gallery[r.ranking[pos]];
            let b = g.detection.bbox;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.query,
                pos + 1,
                g.scene_id,
                b.x,
                b.y,
                b.w,
                b.h,
                r.similarities[pos],
                u8::from(r.correct[pos])
            )
            .expect("write to string");
        }
    }
    out
}
