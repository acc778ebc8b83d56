//! Drawings: Quick Draw "simplified" NDJSON reader and a synthetic generator.
//!
//! A drawing is a list of strokes in patch coordinates (mm, `u` to the right,
//! `v` downwards, origin at the top-left corner of the drawing area).

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::recording::{TrajectoryPoint, MAX_STROKE_MS, MIN_STROKE_MS};
use crate::sim::noise::{derived_rng, stream};
use crate::sim::scene::DrawingArea;

pub type Point2 = [f64; 2];
pub type Polyline = Vec<Point2>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drawing {
    pub category: String,
    pub strokes: Vec<Polyline>,
}

/// Quick Draw simplified drawings live in a 0..=255 box.
pub const QUICKDRAW_EXTENT: f64 = 255.0;

#[derive(Debug, Deserialize)]
struct QuickDrawRecord {
    #[serde(default)]
    word: Option<String>,
    drawing: Vec<Vec<Vec<f64>>>,
}

/// Result of reading a Quick Draw file: parsed drawings plus one
/// line-numbered error per malformed record.
#[derive(Debug, Default)]
pub struct QuickDrawFile {
    pub drawings: Vec<Drawing>,
    pub malformed: Vec<Error>,
    /// Line numbers of well-formed records with an empty drawing.
    pub empty: Vec<usize>,
}

impl QuickDrawFile {
    /// Fails on the first malformed record.
    pub fn strict(self) -> Result<Vec<Drawing>> {
        match self.malformed.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(self.drawings),
        }
    }
}

fn parse_record(line: &str, size_mm: f64) -> std::result::Result<Option<Drawing>, String> {
    let rec: QuickDrawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let scale = size_mm / QUICKDRAW_EXTENT;
    let mut strokes = Vec::with_capacity(rec.drawing.len());
    for (s, stroke) in rec.drawing.iter().enumerate() {
        if stroke.len() < 2 {
            return Err(format!("stroke {s} needs x and y arrays"));
        }
        let (xs, ys) = (&stroke[0], &stroke[1]);
        if xs.len() != ys.len() {
            return Err(format!("stroke {s} has {} x and {} y values", xs.len(), ys.len()));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite() || *v < 0.0 || *v > QUICKDRAW_EXTENT) {
            return Err(format!("stroke {s} has coordinates outside 0..=255"));
        }
        let mut poly: Polyline = Vec::with_capacity(xs.len());
        for (&x, &y) in xs.iter().zip(ys) {
            let p = [x * scale, y * scale];
            if poly.last() != Some(&p) {
                poly.push(p);
            }
        }
        // single-point taps carry no path
        if poly.len() >= 2 {
            strokes.push(poly);
        }
    }
    if strokes.is_empty() {
        return Ok(None);
    }
    Ok(Some(Drawing {
        category: rec.word.unwrap_or_else(|| "unknown".into()),
        strokes,
    }))
}

/// Parses newline-delimited Quick Draw records, scaling the 0..=255 box
/// onto a `size_mm` square.
pub fn parse_quickdraw(text: &str, origin: &str, size_mm: f64) -> QuickDrawFile {
    let mut out = QuickDrawFile::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, size_mm) {
            Ok(Some(d)) => out.drawings.push(d),
            Ok(None) => {
                log::warn!("{origin}:{}: empty drawing skipped", i + 1);
                out.empty.push(i + 1);
            }
            Err(msg) => out.malformed.push(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            }),
        }
    }
    out
}

pub fn load_quickdraw_simplified(path: &Path, area: &DrawingArea) -> Result<QuickDrawFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_quickdraw(&text, &path.display().to_string(), area.size_mm))
}

/// Random lines, arcs and zigzags inside a `size_mm` square.
pub fn synth_drawing(seed: u64, stroke_count: usize, size_mm: f64) -> Result<Drawing> {
    if stroke_count == 0 {
        return Err(Error::Invalid("stroke_count must be at least 1".into()));
    }
    let mut rng = derived_rng(seed, &[stream::DRAWING]);
    let margin = 0.05 * size_mm;
    let lo = margin;
    let hi = size_mm - margin;
    let mut strokes = Vec::with_capacity(stroke_count);
    while strokes.len() < stroke_count {
        let poly: Polyline = match rng.gen_range(0..3) {
            0 => {
                let a = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
                let b = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
                vec![a, b]
            }
            1 => {
                let r = rng.gen_range(0.1 * size_mm..0.35 * size_mm);
                let cx = rng.gen_range(lo + r..=hi - r);
                let cy = rng.gen_range(lo + r..=hi - r);
                let start = rng.gen_range(0.0..2.0 * PI);
                let sweep = rng.gen_range(0.5 * PI..1.8 * PI);
                let n = rng.gen_range(8..=16);
                (0..n)
                    .map(|k| {
                        let th = start + sweep * k as f64 / (n - 1) as f64;
                        [cx + r * th.cos(), cy + r * th.sin()]
                    })
                    .collect()
            }
            _ => {
                let n = rng.gen_range(3..=6);
                (0..n)
                    .map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi)])
                    .collect()
            }
        };
        if polyline_length(&poly) > 1e-6 {
            strokes.push(poly);
        }
    }
    Ok(Drawing {
        category: format!("synth_{}", seed % 1000),
        strokes,
    })
}

pub fn polyline_length(poly: &[Point2]) -> f64 {
    poly.windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum()
}

/// Times a stroke at constant pen speed, stretching or compressing it so the
/// duration stays within `[1, 10] s`. Returns points with `t` starting at 0.
pub fn time_stroke(poly: &[Point2], area: &DrawingArea, pen_speed_mm_s: f64) -> Vec<TrajectoryPoint> {
    let len = polyline_length(poly);
    let duration_ms = (len / pen_speed_mm_s * 1000.0).clamp(MIN_STROKE_MS, MAX_STROKE_MS);
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(poly.len());
    for (i, p) in poly.iter().enumerate() {
        if i > 0 {
            let q = poly[i - 1];
            acc += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        }
        let t = if len > 0.0 {
            duration_ms * acc / len
        } else {
            duration_ms * i as f64 / (poly.len() - 1) as f64
        };
        // repeated points would give non-increasing timestamps
        if out.last().is_some_and(|last: &TrajectoryPoint| t <= last.t_ms) {
            continue;
        }
        out.push(TrajectoryPoint {
            t_ms: t,
            pos: area.to_world(*p),
        });
    }
    if out.len() < 2 {
        out = vec![
            TrajectoryPoint { t_ms: 0.0, pos: area.to_world(poly[0]) },
            TrajectoryPoint { t_ms: duration_ms, pos: area.to_world(poly[poly.len() - 1]) },
        ];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::SceneModel;

    #[test]
    fn diagonal_stroke_spans_patch() {
        let f = parse_quickdraw(r#"{"word":"line","drawing":[[[0,255],[0,255]]]}"#, "q", 80.0);
        let d = f.strict().unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].strokes, vec![vec![[0.0, 0.0], [80.0, 80.0]]]);
        assert_eq!(d[0].category, "line");
    }

    #[test]
    fn empty_and_malformed_records() {
        let text = [
            r#"{"word":"a","drawing":[[[0,10],[0,10]]]}"#,
            r#"{"word":"b","drawing":[]}"#,
            r#"{"word":"c","drawing":[[[0,10],[0]]]}"#,
            r#"not json"#,
            r#"{"word":"e","drawing":[[[0,10,20],[5,5,5]]]}"#,
        ]
        .join("\n");
        let f = parse_quickdraw(&text, "cat.ndjson", 80.0);
        assert_eq!(f.drawings.len(), 2);
        assert_eq!(f.empty, vec![2]);
        let lines: Vec<usize> = f
            .malformed
            .iter()
            .map(|e| match e {
                Error::Parse { line, .. } => *line,
                _ => 0,
            })
            .collect();
        assert_eq!(lines, vec![3, 4]);
        // 5 records - 2 malformed - 1 empty
        assert_eq!(f.drawings.len(), 5 - f.malformed.len() - f.empty.len());
        assert!(f.strict().is_err());
    }

    #[test]
    fn synth_drawings_are_bounded_and_seeded() {
        let one = synth_drawing(1, 1, 80.0).unwrap();
        assert_eq!(one.strokes.len(), 1);
        for seed in 0..50 {
            let d = synth_drawing(seed, 5, 80.0).unwrap();
            assert_eq!(d.strokes.len(), 5);
            for p in d.strokes.iter().flatten() {
                assert!((0.0..=80.0).contains(&p[0]) && (0.0..=80.0).contains(&p[1]));
            }
            assert_eq!(d, synth_drawing(seed, 5, 80.0).unwrap());
        }
        assert_ne!(synth_drawing(1, 3, 80.0).unwrap(), synth_drawing(2, 3, 80.0).unwrap());
        assert!(synth_drawing(1, 0, 80.0).is_err());
    }

    #[test]
    fn stroke_timing_is_clipped() {
        let area = SceneModel::default().drawing_area;
        // 10 mm at 40 mm/s would take 250 ms: stretched to 1 s
        let short = time_stroke(&[[0.0, 0.0], [10.0, 0.0]], &area, 40.0);
        assert_eq!(short.last().unwrap().t_ms, 1000.0);
        // 80 mm at 40 mm/s = 2 s
        let mid = time_stroke(&[[0.0, 0.0], [40.0, 0.0], [80.0, 0.0]], &area, 40.0);
        assert_eq!(mid.iter().map(|p| p.t_ms).collect::<Vec<_>>(), vec![0.0, 1000.0, 2000.0]);
        let long = time_stroke(&[[0.0, 0.0], [80.0, 0.0]], &area, 1.0);
        assert_eq!(long.last().unwrap().t_ms, 10_000.0);
    }
}
