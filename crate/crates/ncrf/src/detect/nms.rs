//! Greedy non-maximum suppression over a probability map.

use std::io::Write;
use std::path::Path;

use crate::detect::ProbabilityMap;
use crate::error::{NcrfError, Result};

/// One detection: slide-pixel coordinate of the winning cell center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub prob: f32,
}

/// Repeatedly emit the highest-probability unsuppressed cell at or above
/// `prob_floor`, then suppress every cell strictly within `radius` pixels
/// (Euclidean, on slide coordinates). Ties break by raster scan order.
pub fn nms(map: &ProbabilityMap, radius: f64, prob_floor: f64) -> Result<Vec<Detection>> {
    if radius <= 0.0 {
        return Err(NcrfError::Contract("nms radius must be positive".into()));
    }
    if !(0.0..1.0).contains(&prob_floor) {
        return Err(NcrfError::Contract(format!(
            "prob floor {prob_floor} outside [0, 1)"
        )));
    }
    let n = map.probs.len();
    // (probability, scan index), sorted best-first with scan-order ties
    let mut order: Vec<(f32, usize)> = (0..n).map(|i| (map.prob_or_zero(i), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut suppressed = vec![false; n];
    let mut out = Vec::new();
    let r2 = radius * radius;
    for &(prob, i) in &order {
        if (prob as f64) < prob_floor {
            break;
        }
        if suppressed[i] {
            continue;
        }
        let (ix, iy) = (i % map.nx, i / map.nx);
        let (cx, cy) = map.cell_center(ix, iy);
        out.push(Detection { x: cx, y: cy, prob });
        for (j, s) in suppressed.iter_mut().enumerate() {
            if *s {
                continue;
            }
            let (jx, jy) = (j % map.nx, j / map.nx);
            let (px, py) = map.cell_center(jx, jy);
            let dx = px as f64 - cx as f64;
            let dy = py as f64 - cy as f64;
            if dx * dx + dy * dy < r2 {
                *s = true;
            }
        }
    }
    Ok(out)
}

pub fn save_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut text = String::from("x,y,prob\n");
    for d in detections {
        text.push_str(&format!("{},{},{}\n", d.x, d.y, d.prob));
    }
    let mut file = std::fs::File::create(path).map_err(NcrfError::io(path))?;
    file.write_all(text.as_bytes()).map_err(NcrfError::io(path))
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(NcrfError::io(path))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "x,y,prob" {
                return Err(NcrfError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    detail: "expected header x,y,prob".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parsed = (|| -> Option<Detection> {
            let x = fields.next()?.trim().parse().ok()?;
            let y = fields.next()?.trim().parse().ok()?;
            let prob = fields.next()?.trim().parse().ok()?;
            if fields.next().is_some() {
                return None;
            }
            Some(Detection { x, y, prob })
        })()
        .ok_or_else(|| NcrfError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            detail: "expected x,y,prob".into(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}
