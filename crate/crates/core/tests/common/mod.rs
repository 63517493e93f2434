//! Brute-force key-patch pipeline written without reference to the library
//! implementation, plus shared fixtures.
#![allow(dead_code)]

use bat_core::keypatch::BinaryMask;

/// Lesion flag with a one-pixel background frame around the image.
fn padded(mask: &BinaryMask) -> (Vec<Vec<bool>>, usize, usize) {
    let (h, w) = (mask.height(), mask.width());
    let mut g = vec![vec![false; w + 2]; h + 2];
    for (r, row) in g.iter_mut().enumerate().take(h + 1).skip(1) {
        for (c, cell) in row.iter_mut().enumerate().take(w + 1).skip(1) {
            *cell = mask.get(r - 1, c - 1);
        }
    }
    (g, h, w)
}

pub fn boundary_set(mask: &BinaryMask) -> Vec<Vec<bool>> {
    let (g, h, w) = padded(mask);
    let mut out = vec![vec![false; w]; h];
    for r in 0..h {
        for c in 0..w {
            let (pr, pc) = (r + 1, c + 1);
            out[r][c] = g[pr][pc] && (!g[pr - 1][pc] || !g[pr + 1][pc] || !g[pr][pc - 1] || !g[pr][pc + 1]);
        }
    }
    out
}

/// The eight unit offsets sorted clockwise (screen coordinates, rows
/// growing downwards) starting from west.
fn clockwise_from_west() -> Vec<(i64, i64)> {
    let mut dirs: Vec<(i64, i64)> = (-1..=1)
        .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
        .filter(|&d| d != (0, 0))
        .collect();
    // math angle with y pointing up, turned into degrees clockwise from west
    let angle = |&(dr, dc): &(i64, i64)| {
        let theta = (-(dr as f64)).atan2(dc as f64).to_degrees();
        (180.0 - theta).rem_euclid(360.0)
    };
    dirs.sort_by(|a, b| angle(a).total_cmp(&angle(b)));
    dirs
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut y = x;
    while parent[y] != root {
        let next = parent[y];
        parent[y] = root;
        y = next;
    }
    root
}

/// Contours as ordered pixel lists.
pub fn contours(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let b = boundary_set(mask);
    let (h, w) = (mask.height(), mask.width());
    let mut parent: Vec<usize> = (0..h * w).collect();
    for r in 0..h {
        for c in 0..w {
            if !b[r][c] {
                continue;
            }
            for (dr, dc) in [(0i64, 1i64), (1, -1), (1, 0), (1, 1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w && b[nr as usize][nc as usize] {
                    let (x, y) = (find(&mut parent, r * w + c), find(&mut parent, nr as usize * w + nc as usize));
                    parent[x] = y;
                }
            }
        }
    }
    let mut members: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for r in 0..h {
        for c in 0..w {
            if b[r][c] {
                let root = find(&mut parent, r * w + c);
                members.entry(root).or_default().push((r, c));
            }
        }
    }
    let mut comps: Vec<Vec<(usize, usize)>> = members.into_values().collect();
    for comp in comps.iter_mut() {
        comp.sort();
    }
    comps.sort_by_key(|comp| comp[0]);

    let dirs = clockwise_from_west();
    comps
        .into_iter()
        .map(|comp| {
            let set: std::collections::HashSet<(usize, usize)> = comp.iter().copied().collect();
            let mut seen = std::collections::HashSet::new();
            let mut order = Vec::new();
            walk(comp[0], 0, &set, &mut seen, &mut order, &dirs);
            assert_eq!(order.len(), comp.len());
            order
        })
        .collect()
}

fn walk(
    p: (usize, usize),
    back: usize,
    set: &std::collections::HashSet<(usize, usize)>,
    seen: &mut std::collections::HashSet<(usize, usize)>,
    order: &mut Vec<(usize, usize)>,
    dirs: &[(i64, i64)],
) {
    seen.insert(p);
    order.push(p);
    for s in 1..=8 {
        let d = (back + s) % 8;
        let (nr, nc) = (p.0 as i64 + dirs[d].0, p.1 as i64 + dirs[d].1);
        if nr < 0 || nc < 0 {
            continue;
        }
        let q = (nr as usize, nc as usize);
        if set.contains(&q) && !seen.contains(&q) {
            walk(q, (d + 4) % 8, set, seen, order, dirs);
        }
    }
}

/// Disc proportion by scanning the whole image.
pub fn proportion(mask: &BinaryMask, row: usize, col: usize, radius: usize) -> f64 {
    let (mut total, mut lesion) = (0usize, 0usize);
    let r2 = (radius * radius) as i64;
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            let (dr, dc) = (r as i64 - row as i64, c as i64 - col as i64);
            if dr * dr + dc * dc <= r2 {
                total += 1;
                lesion += mask.get(r, c) as usize;
            }
        }
    }
    lesion as f64 / total as f64
}

/// Indices of the points surviving all-pairs cyclic suppression.
pub fn suppress(scores: &[f64], k: usize) -> Vec<usize> {
    let n = scores.len();
    (0..n)
        .filter(|&i| {
            (0..n).all(|j| {
                if j == i {
                    return true;
                }
                let gap = i.abs_diff(j);
                let dist = gap.min(n - gap);
                dist > k || scores[j] < scores[i] || (scores[j] == scores[i] && i < j)
            })
        })
        .collect()
}

pub fn keypatch_map(mask: &BinaryMask, radius: usize, k: usize, patch: usize) -> Vec<u8> {
    let gc = mask.width() / patch;
    let mut map = vec![0u8; (mask.height() / patch) * gc];
    for contour in contours(mask) {
        let scores: Vec<f64> = contour
            .iter()
            .map(|&(r, c)| (proportion(mask, r, c, radius) - 0.5).abs())
            .collect();
        for i in suppress(&scores, k) {
            let (r, c) = contour[i];
            map[(r / patch) * gc + c / patch] = 1;
        }
    }
    map
}

/// Random union of filled discs and rectangles, handy for property tests.
pub fn blob_mask(side: usize, shapes: &[(usize, usize, usize, bool)]) -> BinaryMask {
    BinaryMask::from_fn(side, side, |r, c| {
        shapes.iter().any(|&(cr, cc, s, disc)| {
            let (dr, dc) = (r as i64 - cr as i64, c as i64 - cc as i64);
            if disc {
                dr * dr + dc * dc <= (s * s) as i64
            } else {
                dr.abs() <= s as i64 && dc.abs() <= (s as i64) / 2 + 1
            }
        })
    })
}
