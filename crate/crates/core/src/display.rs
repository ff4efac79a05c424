//! Screen geometry for rendering an explanation: grid cells scaled to pixel
//! rectangles, pair colors, and the confidence label.

use serde::{Deserialize, Serialize};

use crate::explain::ExplanationRecord;

/// Pair colors by rank within a support; query and support boxes of one pair
/// share a color.
pub const PAIR_COLORS: [&str; 5] = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// Cell `(row, col)` of a `grid x grid` partition of a `width x height` image.
pub fn cell_rect(cell: (usize, usize), grid: usize, width: f64, height: f64) -> Rect {
    let (cw, ch) = (width / grid as f64, height / grid as f64);
    Rect {
        x: cell.1 as f64 * cw,
        y: cell.0 as f64 * ch,
        width: cw,
        height: ch,
    }
}

/// Whole-number percentage, e.g. `"10%"`.
pub fn confidence_label(record: &ExplanationRecord) -> String {
    format!("{}%", record.confidence_percent)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOverlay {
    pub color: String,
    pub query: Rect,
    pub support: Rect,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportOverlay {
    pub image_id: String,
    pub rank: usize,
    pub pairs: Vec<PairOverlay>,
}

/// Rectangles for every box pair of every support; no pairs when the record
/// hides its boxes.
pub fn overlays(record: &ExplanationRecord, query_size: (f64, f64), support_size: (f64, f64)) -> Vec<SupportOverlay> {
    record
        .supports
        .iter()
        .map(|s| SupportOverlay {
            image_id: s.image_id.clone(),
            rank: s.rank,
            pairs: if record.show_boxes {
                s.boxes
                    .iter()
                    .enumerate()
                    .map(|(i, b)| PairOverlay {
                        color: PAIR_COLORS[i % PAIR_COLORS.len()].to_string(),
                        query: cell_rect(b.query_patch, record.grid, query_size.0, query_size.1),
                        support: cell_rect(b.support_patch, record.grid, support_size.0, support_size.1),
                        score: b.score,
                    })
                    .collect()
            } else {
                Vec::new()
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{BoxPair, SupportImage};
    use crate::knn::Method;

    fn record(method: Method, boxes: usize, show: bool) -> ExplanationRecord {
        ExplanationRecord {
            query_id: "q".into(),
            method,
            label: 1,
            label_name: "owl".into(),
            confidence_percent: crate::explain::confidence_percent(2, 20),
            grid: 7,
            supports: (0..5)
                .map(|rank| SupportImage {
                    image_id: format!("s{rank}"),
                    rank,
                    boxes: (0..boxes)
                        .map(|i| BoxPair {
                            query_patch: (i, 6 - i),
                            support_patch: (rank, i),
                            score: 0.5,
                        })
                        .collect(),
                })
                .collect(),
            show_boxes: show,
        }
    }

    #[test]
    fn cell_geometry() {
        assert_eq!(cell_rect((0, 0), 7, 224.0, 224.0), Rect { x: 0.0, y: 0.0, width: 32.0, height: 32.0 });
        assert_eq!(cell_rect((3, 5), 7, 224.0, 224.0), Rect { x: 160.0, y: 96.0, width: 32.0, height: 32.0 });
        let r = cell_rect((6, 2), 7, 350.0, 140.0);
        assert_eq!((r.x, r.y, r.width, r.height), (100.0, 120.0, 50.0, 20.0));
    }

    #[test]
    fn rectangle_counts() {
        let emd = overlays(&record(Method::EmdCorr, 5, true), (224.0, 224.0), (224.0, 224.0));
        assert_eq!(emd.iter().map(|s| s.pairs.len()).sum::<usize>(), 25);
        assert_eq!(emd[0].pairs.len(), 5);
        assert_eq!(emd[0].pairs[2].color, PAIR_COLORS[2]);
        assert_eq!(emd[0].pairs[2].query, cell_rect((2, 4), 7, 224.0, 224.0));

        let knn = overlays(&record(Method::Knn, 0, false), (224.0, 224.0), (224.0, 224.0));
        assert!(knn.iter().all(|s| s.pairs.is_empty()));
        let hidden = overlays(&record(Method::EmdCorr, 5, false), (224.0, 224.0), (224.0, 224.0));
        assert!(hidden.iter().all(|s| s.pairs.is_empty()));
    }

    #[test]
    fn confidence_text() {
        assert_eq!(confidence_label(&record(Method::Knn, 0, false)), "10%");
    }
}
