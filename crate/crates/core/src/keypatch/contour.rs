//! Boundary extraction and contour ordering.
//!
//! A boundary pixel is a lesion pixel with at least one background
//! 4-neighbour; pixels outside the image count as background. Boundary
//! pixels are grouped into 8-connected contours and each contour is walked
//! clockwise with a Moore-neighbour scan: from the current pixel the eight
//! neighbours are examined clockwise starting just after the direction that
//! points back to the predecessor, and the first unvisited boundary pixel is
//! taken. When a walk dead-ends (spurs, one-pixel bridges) it resumes from the
//! most recent pixel on the path that still has an unvisited neighbour, so
//! every boundary pixel appears exactly once.

use super::BinaryMask;

/// Neighbour offsets `(drow, dcol)` in clockwise order starting at west.
const CLOCKWISE: [(isize, isize); 8] = [
    (0, -1),  // W
    (-1, -1), // NW
    (-1, 0),  // N
    (-1, 1),  // NE
    (0, 1),   // E
    (1, 1),   // SE
    (1, 0),   // S
    (1, -1),  // SW
];
const WEST: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelPos {
    pub row: usize,
    pub col: usize,
}

/// One 8-connected run of boundary pixels in trace order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<PixelPos>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn is_boundary_pixel(mask: &BinaryMask, row: usize, col: usize) -> bool {
    if !mask.get(row, col) {
        return false;
    }
    let (r, c) = (row as isize, col as isize);
    !mask.get_signed(r - 1, c)
        || !mask.get_signed(r + 1, c)
        || !mask.get_signed(r, c - 1)
        || !mask.get_signed(r, c + 1)
}

struct Frame {
    pos: PixelPos,
    back: usize,
    scanned: usize,
}

/// Extracts every boundary pixel, grouped into contours. Contours are ordered
/// by their starting pixel (the topmost, then leftmost pixel of the contour)
/// in row-major order. An empty mask yields no contours.
pub fn trace_boundary(mask: &BinaryMask) -> Vec<Contour> {
    let (h, w) = (mask.height(), mask.width());
    let mut boundary = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            boundary[r * w + c] = is_boundary_pixel(mask, r, c);
        }
    }

    let mut visited = vec![false; h * w];
    let mut contours = Vec::new();
    for start in 0..h * w {
        if !boundary[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        let start_pos = PixelPos {
            row: start / w,
            col: start % w,
        };
        let mut points = vec![start_pos];
        let mut stack = vec![Frame {
            pos: start_pos,
            back: WEST,
            scanned: 0,
        }];

        while let Some(top) = stack.last_mut() {
            let mut advanced = None;
            while top.scanned < 8 {
                top.scanned += 1;
                let dir = (top.back + top.scanned) % 8;
                let (dr, dc) = CLOCKWISE[dir];
                let nr = top.pos.row as isize + dr;
                let nc = top.pos.col as isize + dc;
                if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                    continue;
                }
                let idx = nr as usize * w + nc as usize;
                if boundary[idx] && !visited[idx] {
                    visited[idx] = true;
                    advanced = Some((
                        PixelPos {
                            row: nr as usize,
                            col: nc as usize,
                        },
                        (dir + 4) % 8,
                    ));
                    break;
                }
            }
            match advanced {
                Some((pos, back)) => {
                    points.push(pos);
                    stack.push(Frame { pos, back, scanned: 0 });
                }
                None => {
                    stack.pop();
                }
            }
        }
        contours.push(Contour { points });
    }
    contours
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(side: usize, top: usize, extent: usize) -> BinaryMask {
        BinaryMask::from_fn(side, side, |r, c| {
            (top..top + extent).contains(&r) && (top..top + extent).contains(&c)
        })
    }

    #[test]
    fn empty_mask_has_no_boundary() {
        assert!(trace_boundary(&BinaryMask::zeros(32, 32)).is_empty());
    }

    #[test]
    fn isolated_pixel_is_its_own_boundary() {
        let mut m = BinaryMask::zeros(32, 32);
        m.set(5, 7, true);
        let contours = trace_boundary(&m);
        assert_eq!(contours.len(), 1);
        assert_eq!(contours[0].points, vec![PixelPos { row: 5, col: 7 }]);
    }

    #[test]
    fn square_is_traced_clockwise_from_top_left() {
        let contours = trace_boundary(&square(32, 8, 10));
        assert_eq!(contours.len(), 1);
        let pts = &contours[0].points;
        assert_eq!(pts.len(), 36);
        assert_eq!(pts[0], PixelPos { row: 8, col: 8 });
        // along the top edge first, then down the right side
        assert_eq!(pts[1], PixelPos { row: 8, col: 9 });
        assert_eq!(pts[9], PixelPos { row: 8, col: 17 });
        assert_eq!(pts[10], PixelPos { row: 9, col: 17 });
        assert_eq!(*pts.last().unwrap(), PixelPos { row: 9, col: 8 });
    }

    #[test]
    fn full_image_boundary_is_the_frame() {
        let m = BinaryMask::from_fn(16, 16, |_, _| true);
        let contours = trace_boundary(&m);
        assert_eq!(contours.len(), 1);
        assert_eq!(contours[0].len(), 60);
    }

    #[test]
    fn separate_blobs_are_ordered_row_major() {
        let m = BinaryMask::from_fn(32, 32, |r, c| {
            ((2..5).contains(&r) && (20..23).contains(&c)) || ((10..13).contains(&r) && (1..4).contains(&c))
        });
        let contours = trace_boundary(&m);
        assert_eq!(contours.len(), 2);
        assert_eq!(contours[0].points[0], PixelPos { row: 2, col: 20 });
        assert_eq!(contours[1].points[0], PixelPos { row: 10, col: 1 });
        assert!(contours.iter().all(|c| c.len() == 8));
    }

    #[test]
    fn ring_inner_and_outer_edges_are_all_reported() {
        // 12x12 square with a 4x4 hole: thick enough that the hole edge is a
        // separate contour
        let m = BinaryMask::from_fn(32, 32, |r, c| {
            let outer = (4..16).contains(&r) && (4..16).contains(&c);
            let hole = (8..12).contains(&r) && (8..12).contains(&c);
            outer && !hole
        });
        let contours = trace_boundary(&m);
        let total: usize = contours.iter().map(Contour::len).sum();
        assert_eq!(contours.len(), 2);
        assert_eq!(total, 44 + 16);
    }
}
