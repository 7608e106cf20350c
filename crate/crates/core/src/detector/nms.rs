use std::cmp::Ordering;

use crate::error::{Error, Result};

use super::{BoundingBox, Detection};

/// Intersection over union of two center-size boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Rank order: higher score first, then smaller class id, then smaller `x`.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
}

/// Drops detections scoring below `conf_threshold`, then greedily suppresses,
/// per class, any detection overlapping an already kept one by more than
/// `iou_threshold`. Output is in rank order.
pub fn nms(dets: &[Detection], iou_threshold: f64, conf_threshold: f64) -> Result<Vec<Detection>> {
    for (name, t) in [
        ("iou_threshold", iou_threshold),
        ("conf_threshold", conf_threshold),
    ] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!(
                "{name} must lie in [0, 1], got {t}"
            )));
        }
    }
    nms_unchecked(dets, iou_threshold, conf_threshold)
}

/// [`nms`] without the threshold range check.
pub(crate) fn nms_unchecked(
    dets: &[Detection],
    iou_threshold: f64,
    conf_threshold: f64,
) -> Result<Vec<Detection>> {
    let mut candidates: Vec<&Detection> =
        dets.iter().filter(|d| d.score >= conf_threshold).collect();
    candidates.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<&Detection> = Vec::new();
    for d in candidates {
        let mut suppressed = false;
        for k in kept.iter().filter(|k| k.class_id == d.class_id) {
            if iou(&k.bbox, &d.bbox)? > iou_threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(d);
        }
    }
    Ok(kept.into_iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Position;

    fn corner_box(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox {
            x: (x0 + x1) / 2.0,
            y: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
            confidence: 1.0,
        }
    }

    fn det(b: BoundingBox, class_id: usize, score: f64) -> Detection {
        Detection {
            bbox: b,
            class_id,
            class_name: format!("c{class_id}"),
            score,
            position: Position::Front,
        }
    }

    #[test]
    fn iou_examples() {
        let a = corner_box(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &corner_box(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let b = corner_box(1.0, 0.0, 3.0, 2.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let flat = BoundingBox { w: 0.0, ..a };
        assert!(iou(&a, &flat).is_err());
    }

    #[test]
    fn nms_examples() {
        let b = corner_box(0.0, 0.0, 10.0, 10.0);
        let single = [det(b, 0, 0.9)];
        assert_eq!(nms(&single, 0.45, 0.5).unwrap(), single.to_vec());

        let dup = [det(b, 0, 0.8), det(b, 0, 0.9)];
        let kept = nms(&dup, 0.45, 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);

        let two_classes = [det(b, 0, 0.8), det(b, 1, 0.9)];
        let kept = nms(&two_classes, 0.45, 0.5).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].class_id, 1);

        let low = [det(b, 0, 0.2)];
        assert!(nms(&low, 0.45, 0.5).unwrap().is_empty());
        assert!(nms(&low, 1.5, 0.5).is_err());
    }

    #[test]
    fn ties_break_on_class_then_x() {
        let a = det(corner_box(0.0, 0.0, 1.0, 1.0), 1, 0.7);
        let b = det(corner_box(5.0, 0.0, 6.0, 1.0), 0, 0.7);
        let c = det(corner_box(2.0, 0.0, 3.0, 1.0), 0, 0.7);
        let kept = nms(&[a, b, c], 0.5, 0.0).unwrap();
        let order: Vec<(usize, f64)> = kept.iter().map(|d| (d.class_id, d.bbox.x)).collect();
        assert_eq!(order, vec![(0, 2.5), (0, 5.5), (1, 0.5)]);
    }
}
