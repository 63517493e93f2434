use serde::{Deserialize, Serialize};

use super::contour::{trace_boundary, Contour};
use super::{BinaryMask, KeypatchError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub radius: usize,
    pub nms_neighbors: usize,
    pub patch_side: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            radius: 10,
            nms_neighbors: 30,
            patch_side: 16,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), KeypatchError> {
        if self.radius == 0 || self.nms_neighbors == 0 || self.patch_side == 0 {
            return Err(KeypatchError::InvalidConfig(format!(
                "radius, nms_neighbors and patch_side must all be >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// A traced boundary pixel with its contour position and ambiguity score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub row: usize,
    pub col: usize,
    /// Which contour of the trace this point belongs to.
    pub contour: usize,
    /// Position along that contour.
    pub index: usize,
    pub proportion: f64,
    pub score: f64,
}

/// Binary per-patch target, row-major over the patch grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyPatchMap {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub values: Vec<u8>,
}

impl KeyPatchMap {
    pub fn zeros(grid_rows: usize, grid_cols: usize) -> Self {
        Self {
            grid_rows,
            grid_cols,
            values: vec![0; grid_rows * grid_cols],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("key-patch map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KeypatchError> {
        let map: Self = serde_json::from_str(text).map_err(|e| KeypatchError::InvalidMap(e.to_string()))?;
        if map.values.len() != map.grid_rows * map.grid_cols {
            return Err(KeypatchError::InvalidMap(format!(
                "{} values for a {}x{} grid",
                map.values.len(),
                map.grid_rows,
                map.grid_cols
            )));
        }
        if map.values.iter().any(|&v| v > 1) {
            return Err(KeypatchError::InvalidMap("values must be 0 or 1".into()));
        }
        Ok(map)
    }
}

/// Fraction of in-image pixels within the closed disc of `radius` around
/// `(row, col)` that are lesion. Pixels outside the image are excluded from
/// both counts.
pub fn circle_proportion(mask: &BinaryMask, row: usize, col: usize, radius: usize) -> f64 {
    let r = radius as isize;
    let r2 = r * r;
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let (row, col) = (row as isize, col as isize);
    let mut inside = 0u64;
    let mut lesion = 0u64;
    for dr in -r..=r {
        let rr = row + dr;
        if rr < 0 || rr >= h {
            continue;
        }
        // widest |dc| with dr² + dc² <= r²
        let mut half = r;
        while half * half + dr * dr > r2 {
            half -= 1;
        }
        let lo = (col - half).max(0);
        let hi = (col + half).min(w - 1);
        for cc in lo..=hi {
            inside += 1;
            lesion += mask.get(rr as usize, cc as usize) as u64;
        }
    }
    lesion as f64 / inside as f64
}

/// Annotates traced contours with their disc proportion and `|p - 0.5|`.
pub fn score_boundary(contours: &[Contour], mask: &BinaryMask, cfg: &GeneratorConfig) -> Vec<BoundaryPoint> {
    contours
        .iter()
        .enumerate()
        .flat_map(|(ci, contour)| {
            contour.points.iter().enumerate().map(move |(index, p)| {
                let proportion = circle_proportion(mask, p.row, p.col, cfg.radius);
                BoundaryPoint {
                    row: p.row,
                    col: p.col,
                    contour: ci,
                    index,
                    proportion,
                    score: (proportion - 0.5).abs(),
                }
            })
        })
        .collect()
}

/// Keeps the points whose score is maximal among their contour neighbours
/// within `nms_neighbors` steps (cyclic along the contour). Among equal
/// scores only the smallest contour index survives.
///
/// `points` must be grouped by contour with indices in trace order, as
/// produced by [`score_boundary`].
pub fn nms_filter(points: &[BoundaryPoint], nms_neighbors: usize) -> Vec<BoundaryPoint> {
    let mut kept = Vec::new();
    let mut start = 0;
    while start < points.len() {
        let contour = points[start].contour;
        let end = points[start..]
            .iter()
            .position(|p| p.contour != contour)
            .map_or(points.len(), |off| start + off);
        let run = &points[start..end];
        let n = run.len();
        let reach = nms_neighbors.min(n / 2);
        for (i, p) in run.iter().enumerate() {
            let dominated = (1..=reach).any(|d| {
                let ahead = (i + d) % n;
                let behind = (i + n - d) % n;
                beats(run, ahead, i) || beats(run, behind, i)
            });
            if !dominated {
                kept.push(*p);
            }
        }
        start = end;
    }
    kept
}

/// Whether `other` suppresses `i`: strictly higher score, or an equal score at
/// an earlier contour index.
#[inline]
fn beats(run: &[BoundaryPoint], other: usize, i: usize) -> bool {
    other != i && (run[other].score > run[i].score || (run[other].score == run[i].score && other < i))
}

/// Row-major patch index of a pixel.
#[inline]
pub fn to_patch_index(row: usize, col: usize, patch_side: usize, grid_cols: usize) -> usize {
    (row / patch_side) * grid_cols + col / patch_side
}

/// Full pipeline: trace, score, suppress, rasterize onto the patch grid.
pub fn generate_keypatch_map(mask: &BinaryMask, cfg: &GeneratorConfig) -> Result<KeyPatchMap, KeypatchError> {
    cfg.validate()?;
    mask.check_patch_grid(cfg.patch_side)?;
    let grid_rows = mask.height() / cfg.patch_side;
    let grid_cols = mask.width() / cfg.patch_side;
    let mut map = KeyPatchMap::zeros(grid_rows, grid_cols);

    let contours = trace_boundary(mask);
    let scored = score_boundary(&contours, mask, cfg);
    for p in nms_filter(&scored, cfg.nms_neighbors) {
        map.values[to_patch_index(p.row, p.col, cfg.patch_side, grid_cols)] = 1;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(contour: usize, index: usize, score: f64) -> BoundaryPoint {
        BoundaryPoint {
            row: 0,
            col: index,
            contour,
            index,
            proportion: 0.5 + score,
            score,
        }
    }

    #[test]
    fn disc_of_radius_ten_has_317_pixels() {
        let mut m = BinaryMask::zeros(64, 64);
        m.set(30, 30, true);
        let p = circle_proportion(&m, 30, 30, 10);
        assert_eq!(p, 1.0 / 317.0);
    }

    #[test]
    fn proportion_extremes() {
        let ones = BinaryMask::from_fn(32, 32, |_, _| true);
        assert_eq!(circle_proportion(&ones, 16, 16, 10), 1.0);
        assert_eq!(circle_proportion(&ones, 0, 0, 10), 1.0);
        assert_eq!(circle_proportion(&BinaryMask::zeros(32, 32), 5, 5, 10), 0.0);
    }

    #[test]
    fn score_is_distance_from_half() {
        let m = BinaryMask::from_fn(32, 32, |r, _| r >= 16);
        let contours = trace_boundary(&m);
        let scored = score_boundary(&contours, &m, &GeneratorConfig::default());
        assert!(!scored.is_empty());
        for p in &scored {
            assert_eq!(p.score, (p.proportion - 0.5).abs());
        }
    }

    #[test]
    fn equal_scores_keep_only_contour_start() {
        let pts: Vec<_> = (0..100).map(|i| point(0, i, 0.2)).collect();
        let kept = nms_filter(&pts, 30);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].index, 0);
    }

    #[test]
    fn single_point_survives() {
        let kept = nms_filter(&[point(0, 0, 0.1)], 30);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn short_contour_compares_against_everything() {
        let pts = vec![point(0, 0, 0.1), point(0, 1, 0.4), point(0, 2, 0.3)];
        let kept = nms_filter(&pts, 30);
        assert_eq!(kept.iter().map(|p| p.index).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn contours_are_suppressed_independently() {
        let mut pts: Vec<_> = (0..5).map(|i| point(0, i, 0.1 * i as f64)).collect();
        pts.extend((0..3).map(|i| point(1, i, 0.01)));
        let kept = nms_filter(&pts, 30);
        let ids: Vec<_> = kept.iter().map(|p| (p.contour, p.index)).collect();
        assert_eq!(ids, vec![(0, 4), (1, 0)]);
    }

    #[test]
    fn window_wraps_around_closed_contours() {
        // the last point neighbours the first; with k=1 the first point (a
        // peak in linear order) is beaten through the wrap
        let pts = vec![
            point(0, 0, 0.3),
            point(0, 1, 0.1),
            point(0, 2, 0.2),
            point(0, 3, 0.0),
            point(0, 4, 0.4),
        ];
        let kept = nms_filter(&pts, 1);
        assert_eq!(kept.iter().map(|p| p.index).collect::<Vec<_>>(), vec![2, 4]);
    }

    #[test]
    fn patch_index_examples() {
        assert_eq!(to_patch_index(0, 0, 16, 4), 0);
        assert_eq!(to_patch_index(35, 20, 16, 16), 33);
        assert_eq!(to_patch_index(63, 63, 16, 4), 15);
    }

    #[test]
    fn empty_mask_gives_zero_map() {
        let map = generate_keypatch_map(&BinaryMask::zeros(64, 64), &GeneratorConfig::default()).unwrap();
        assert_eq!(map.len(), 16);
        assert_eq!(map.ones(), 0);
    }

    #[test]
    fn isolated_pixel_lights_its_patch() {
        let mut m = BinaryMask::zeros(64, 64);
        m.set(5, 7, true);
        let map = generate_keypatch_map(&m, &GeneratorConfig::default()).unwrap();
        let mut expected = vec![0u8; 16];
        expected[to_patch_index(5, 7, 16, 4)] = 1;
        assert_eq!(map.values, expected);
    }

    #[test]
    fn bad_config_and_grid_are_rejected() {
        let m = BinaryMask::zeros(64, 64);
        let cfg = GeneratorConfig {
            radius: 0,
            ..GeneratorConfig::default()
        };
        assert!(generate_keypatch_map(&m, &cfg).is_err());
        assert!(generate_keypatch_map(&BinaryMask::zeros(40, 64), &GeneratorConfig::default()).is_err());
    }

    #[test]
    fn map_json_shape() {
        let map = KeyPatchMap {
            grid_rows: 1,
            grid_cols: 2,
            values: vec![0, 1],
        };
        assert_eq!(map.to_json(), r#"{"grid_rows":1,"grid_cols":2,"values":[0,1]}"#);
        assert_eq!(KeyPatchMap::from_json(&map.to_json()).unwrap(), map);
        assert!(KeyPatchMap::from_json(r#"{"grid_rows":2,"grid_cols":2,"values":[0,1]}"#).is_err());
    }
}
