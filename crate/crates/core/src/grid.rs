//! Connected components, flood fill, and pixel-set boundary polygons.

use std::collections::{BTreeMap, VecDeque};

use crate::raster::{neighbors4, Pixel};

pub const UNLABELED: u32 = u32::MAX;

/// 4-connected component labels. `labels[p] == UNLABELED` for pixels that
/// were not eligible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Labels {
    /// Flat pixel indices of every component, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (p, &l) in self.labels.iter().enumerate() {
            if l != UNLABELED {
                out[l as usize].push(p);
            }
        }
        out
    }
}

/// Labels the 4-connected components of `eligible` pixels by breadth-first
/// search, numbering components in row-major order of discovery.
pub fn label_components(eligible: &[bool], rows: usize, cols: usize) -> Labels {
    label_components_by(rows, cols, |p| eligible[p], |_, _| true)
}

/// General form: `eligible(p)` gates membership and `joins(a, b)` decides
/// whether two eligible 4-neighbours belong together.
pub fn label_components_by(
    rows: usize,
    cols: usize,
    eligible: impl Fn(usize) -> bool,
    joins: impl Fn(usize, usize) -> bool,
) -> Labels {
    let mut labels = vec![UNLABELED; rows * cols];
    let mut queue = VecDeque::new();
    let mut count = 0u32;
    for start in 0..rows * cols {
        if labels[start] != UNLABELED || !eligible(start) {
            continue;
        }
        labels[start] = count;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors4(p, rows, cols) {
                if labels[q] == UNLABELED && eligible(q) && joins(p, q) {
                    labels[q] = count;
                    queue.push_back(q);
                }
            }
        }
        count += 1;
    }
    Labels {
        rows,
        cols,
        labels,
        count: count as usize,
    }
}

/// 4-connected flood fill from `seeds` over pixels where `passable` holds.
/// Seeds are always included. Returns the reached flat indices, sorted.
pub fn flood_fill(seeds: &[usize], rows: usize, cols: usize, passable: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut seen = vec![false; rows * cols];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in seeds {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    let mut out = Vec::new();
    while let Some(p) = queue.pop_front() {
        out.push(p);
        for q in neighbors4(p, rows, cols) {
            if !seen[q] && passable(q) {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    out.sort_unstable();
    out
}

/// A closed ring of grid-corner coordinates `(row, col)`; the first point
/// is repeated at the end.
pub type Ring = Vec<(f64, f64)>;

/// Traces the boundary of a pixel set into closed rings along pixel edges.
///
/// Every boundary edge is used exactly once, so even-odd filling of all
/// rings reproduces the set. Rings are returned largest-area first; for a
/// 4-connected set the first ring is the outer boundary and the rest are
/// holes.
pub fn trace_rings(pixels: &[Pixel]) -> Vec<Ring> {
    use std::collections::BTreeSet;
    let set: BTreeSet<(i64, i64)> = pixels.iter().map(|p| (p.row as i64, p.col as i64)).collect();
    let inside = |r: i64, c: i64| set.contains(&(r, c));

    // Directed edges with the owning pixel, keyed by start corner. The
    // traversal is clockwise on screen (row axis pointing down).
    type Corner = (i64, i64);
    let mut outgoing: BTreeMap<Corner, Vec<(Corner, (i64, i64))>> = BTreeMap::new();
    let mut total = 0usize;
    for &(r, c) in &set {
        let sides = [
            ((r - 1, c), (r, c), (r, c + 1)),
            ((r, c + 1), (r, c + 1), (r + 1, c + 1)),
            ((r + 1, c), (r + 1, c + 1), (r + 1, c)),
            ((r, c - 1), (r + 1, c), (r, c)),
        ];
        for (nb, from, to) in sides {
            if !inside(nb.0, nb.1) {
                outgoing.entry(from).or_default().push((to, (r, c)));
                total += 1;
            }
        }
    }

    let mut rings = Vec::new();
    let mut used = 0usize;
    while used < total {
        let start = *outgoing
            .iter()
            .find(|(_, v)| !v.is_empty())
            .map(|(k, _)| k)
            .expect("unused edge remains");
        let mut ring = vec![start];
        let mut at = start;
        let mut owner: Option<(i64, i64)> = None;
        loop {
            let edges = outgoing.get_mut(&at).expect("closed boundary");
            // At a diagonal pinch prefer the edge of the same pixel so the
            // ring hugs one side of the touching corner.
            let idx = owner
                .and_then(|o| edges.iter().position(|e| e.1 == o))
                .unwrap_or(0);
            let (to, px) = edges.remove(idx);
            used += 1;
            owner = Some(px);
            at = to;
            ring.push(at);
            if at == start {
                break;
            }
        }
        rings.push(simplify(ring));
    }
    rings.sort_by(|a, b| ring_area(b).abs().total_cmp(&ring_area(a).abs()));
    rings
}

fn simplify(ring: Vec<(i64, i64)>) -> Ring {
    // drop vertices in the middle of straight runs
    let n = ring.len() - 1;
    let pts = &ring[..n];
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n + 1);
    for i in 0..n {
        let prev = pts[(i + n - 1) % n];
        let cur = pts[i];
        let next = pts[(i + 1) % n];
        let d1 = (cur.0 - prev.0, cur.1 - prev.1);
        let d2 = (next.0 - cur.0, next.1 - cur.1);
        if d1.0 * d2.1 - d1.1 * d2.0 != 0 {
            out.push((cur.0 as f64, cur.1 as f64));
        }
    }
    if let Some(&first) = out.first() {
        out.push(first);
    }
    out
}

/// Shoelace area in (row, col) units.
pub fn ring_area(ring: &Ring) -> f64 {
    ring.windows(2)
        .map(|w| w[0].1 * w[1].0 - w[1].1 * w[0].0)
        .sum::<f64>()
        / 2.0
}

/// Even-odd rasterisation: every pixel whose centre lies inside an odd
/// number of rings. Ring coordinates are fractional grid corners.
pub fn rasterize_rings(rings: &[Ring], rows: usize, cols: usize) -> Vec<Pixel> {
    let mut out = Vec::new();
    let mut xs = Vec::new();
    for r in 0..rows {
        let y = r as f64 + 0.5;
        xs.clear();
        for ring in rings {
            for w in ring.windows(2) {
                let ((y0, x0), (y1, x1)) = (w[0], w[1]);
                if (y0 > y) != (y1 > y) {
                    xs.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            for c in 0..cols {
                let x = c as f64 + 0.5;
                if x > pair[0] && x < pair[1] {
                    out.push(Pixel::new(r, c));
                }
            }
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(rows: &[&str]) -> (Vec<bool>, usize, usize) {
        let cols = rows[0].len();
        let m = rows.iter().flat_map(|r| r.chars().map(|ch| ch == '#')).collect();
        (m, rows.len(), cols)
    }

    #[test]
    fn labels_in_discovery_order() {
        let (m, r, c) = mask_from(&["#.#", "#.#", "..#"]);
        let l = label_components(&m, r, c);
        assert_eq!(l.count, 2);
        assert_eq!(l.labels[0], 0);
        assert_eq!(l.labels[2], 1);
        assert_eq!(l.labels[1], UNLABELED);
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let (m, r, c) = mask_from(&["#.", ".#"]);
        assert_eq!(label_components(&m, r, c).count, 2);
    }

    #[test]
    fn flood_fill_includes_seeds() {
        let fill = flood_fill(&[0], 2, 2, |_| false);
        assert_eq!(fill, vec![0]);
        let fill = flood_fill(&[0], 2, 2, |p| p != 3);
        assert_eq!(fill, vec![0, 1, 2]);
    }

    fn pixels_of(rows: &[&str]) -> Vec<Pixel> {
        let mut out = Vec::new();
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                if ch == '#' {
                    out.push(Pixel::new(r, c));
                }
            }
        }
        out
    }

    #[test]
    fn square_traces_to_four_corners() {
        let rings = trace_rings(&pixels_of(&["##", "##"]));
        assert_eq!(rings.len(), 1);
        assert_eq!(rings[0].len(), 5);
        assert_eq!(ring_area(&rings[0]).abs(), 4.0);
    }

    #[test]
    fn ring_with_hole_round_trips() {
        let px = pixels_of(&["###", "#.#", "###"]);
        let rings = trace_rings(&px);
        assert_eq!(rings.len(), 2);
        assert_eq!(rasterize_rings(&rings, 3, 3), px);
    }

    #[test]
    fn diagonal_pinch_round_trips() {
        let px = pixels_of(&["##..", "#.#.", "###.", "..##"]);
        let rings = trace_rings(&px);
        assert_eq!(rasterize_rings(&rings, 4, 4), px);
    }

    proptest! {
        #[test]
        fn rasterizing_traced_rings_reproduces_any_set(bits in prop::collection::vec(any::<bool>(), 36)) {
            let px: Vec<Pixel> = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| Pixel::from_index(i, 6)).collect();
            let rings = trace_rings(&px);
            prop_assert_eq!(rasterize_rings(&rings, 6, 6), px);
        }
    }
}
