use crate::error::{contract_err, Result};
use crate::geometry::Rect;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyMetrics {
    /// Share of attended pixels inside the bounding box.
    pub precision: Real,
    /// Share of bounding-box pixels attended.
    pub recall: Real,
    /// Share of the image attended.
    pub coverage: Real,
}

/// Exact pixel count of a union of rectangles (coordinate compression).
pub fn union_area(rects: &[Rect]) -> usize {
    let rects: Vec<&Rect> = rects.iter().filter(|r| r.area() > 0).collect();
    if rects.is_empty() {
        return 0;
    }
    let mut xs: Vec<usize> = rects.iter().flat_map(|r| [r.x, r.right()]).collect();
    xs.sort_unstable();
    xs.dedup();
    let mut area = 0;
    for pair in xs.windows(2) {
        let (x0, x1) = (pair[0], pair[1]);
        let mut spans: Vec<(usize, usize)> =
            rects.iter().filter(|r| r.x <= x0 && r.right() >= x1).map(|r| (r.y, r.bottom())).collect();
        spans.sort_unstable();
        let mut covered = 0;
        let mut current: Option<(usize, usize)> = None;
        for (a, b) in spans {
            match current {
                Some((ca, cb)) if a <= cb => current = Some((ca, cb.max(b))),
                Some((ca, cb)) => {
                    covered += cb - ca;
                    current = Some((a, b));
                }
                None => current = Some((a, b)),
            }
        }
        if let Some((a, b)) = current {
            covered += b - a;
        }
        area += covered * (x1 - x0);
    }
    area
}

fn intersect(a: &Rect, b: &Rect) -> Option<Rect> {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = a.right().min(b.right());
    let y1 = a.bottom().min(b.bottom());
    (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
}

/// Precision, recall and coverage of attended regions against a bounding box
/// on a square image of side `image_extent`.
pub fn policy_metrics(attended: &[Rect], bbox: Rect, image_extent: usize) -> Result<PolicyMetrics> {
    let att = union_area(attended);
    if att == 0 {
        return Err(contract_err!("precision undefined: no attended pixels"));
    }
    if bbox.area() == 0 {
        return Err(contract_err!("recall undefined: empty bounding box"));
    }
    let clipped: Vec<Rect> = attended.iter().filter_map(|r| intersect(r, &bbox)).collect();
    let inter = union_area(&clipped) as Real;
    Ok(PolicyMetrics {
        precision: inter / att as Real,
        recall: inter / bbox.area() as Real,
        coverage: att as Real / (image_extent * image_extent) as Real,
    })
}
