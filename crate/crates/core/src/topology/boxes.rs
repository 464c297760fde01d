use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TopologyError;

/// Closed axis-aligned box with strictly positive volume. Overlap tests
/// always work on the open interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, TopologyError> {
        let b = AaBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(TopologyError::DimensionMismatch {
                left: self.lo.len(),
                right: self.hi.len(),
            });
        }
        for (k, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(TopologyError::DegenerateBox { coordinate: k, lo: *l, hi: *h });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// Point at fractional position `t ∈ [0,1]^J`.
    pub fn lerp(&self, t: &[f64]) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(t)
            .map(|((l, h), s)| l + s * (h - l))
            .collect()
    }

    /// Intersection of the interiors, if it is nonempty.
    pub fn interior_intersection(&self, other: &AaBox) -> Option<AaBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let l = self.lo[k].max(other.lo[k]);
            let h = self.hi[k].min(other.hi[k]);
            if l >= h {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(AaBox { lo, hi })
    }

    pub fn overlaps(&self, other: &AaBox) -> bool {
        (0..self.dim()).all(|k| self.lo[k].max(other.lo[k]) < self.hi[k].min(other.hi[k]))
    }

    pub fn contains_interior(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| l < x && x < h)
    }

    /// Membership in the closed box widened by `slack·(1+|bound|)`.
    pub fn contains_closed(&self, p: &[f64], slack: f64) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| {
            *x >= l - slack * (1.0 + l.abs()) && *x <= h + slack * (1.0 + h.abs())
        })
    }

    pub fn translate(&self, t: &[f64]) -> AaBox {
        AaBox {
            lo: self.lo.iter().zip(t).map(|(l, s)| l + s).collect(),
            hi: self.hi.iter().zip(t).map(|(h, s)| h + s).collect(),
        }
    }

    /// Shrink every side inward by `fraction` of its width.
    pub fn shrink(&self, fraction: f64) -> AaBox {
        let lo = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + fraction * (h - l))
            .collect();
        let hi = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - fraction * (h - l))
            .collect();
        AaBox { lo, hi }
    }

    pub fn clip(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| x.clamp(*l, *h))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.random_range(*l..*h))
            .collect()
    }
}

/// Finite union of positive-volume boxes in R^J. The list may be empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxUnion {
    pub boxes: Vec<AaBox>,
}

impl BoxUnion {
    pub fn new(boxes: Vec<AaBox>) -> Result<Self, TopologyError> {
        let u = BoxUnion { boxes };
        u.validate()?;
        Ok(u)
    }

    pub fn empty() -> Self {
        BoxUnion { boxes: Vec::new() }
    }

    pub fn single(b: AaBox) -> Self {
        BoxUnion { boxes: vec![b] }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut dim = None;
        for b in &self.boxes {
            b.validate()?;
            match dim {
                None => dim = Some(b.dim()),
                Some(d) if d != b.dim() => {
                    return Err(TopologyError::DimensionMismatch { left: d, right: b.dim() })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.boxes.first().map(AaBox::dim)
    }

    /// Sum of box volumes (equals the union volume when boxes are disjoint).
    pub fn volume(&self) -> f64 {
        self.boxes.iter().map(AaBox::volume).sum()
    }

    pub fn contains_interior(&self, p: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains_interior(p))
    }

    pub fn contains_closed(&self, p: &[f64], slack: f64) -> bool {
        self.boxes.iter().any(|b| b.contains_closed(p, slack))
    }

    /// First pair of overlapping boxes and the center of their intersection.
    pub fn overlap_witness(&self, other: &BoxUnion) -> Option<Vec<f64>> {
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(i) = a.interior_intersection(b) {
                    return Some(i.center());
                }
            }
        }
        None
    }

    pub fn overlaps(&self, other: &BoxUnion) -> bool {
        self.boxes.iter().any(|a| other.boxes.iter().any(|b| a.overlaps(b)))
    }

    pub fn extend(&mut self, other: BoxUnion) {
        self.boxes.extend(other.boxes);
    }

    /// Sample a point uniformly from the union's boxes (box chosen by volume).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        if self.boxes.is_empty() {
            return None;
        }
        let total = self.volume();
        let mut pick = rng.random_range(0.0..total);
        for b in &self.boxes {
            let v = b.volume();
            if pick < v {
                return Some(b.sample(rng));
            }
            pick -= v;
        }
        self.boxes.last().map(|b| b.sample(rng))
    }
}

fn check_dims(u: &BoxUnion, v: &BoxUnion) -> Result<(), TopologyError> {
    if let (Some(a), Some(b)) = (u.dim(), v.dim()) {
        if a != b {
            return Err(TopologyError::DimensionMismatch { left: a, right: b });
        }
    }
    Ok(())
}

/// Exact union-of-boxes representation of the interior intersection.
pub fn box_union_intersect(u: &BoxUnion, v: &BoxUnion) -> Result<BoxUnion, TopologyError> {
    check_dims(u, v)?;
    let boxes = u
        .boxes
        .iter()
        .flat_map(|a| v.boxes.iter().filter_map(move |b| a.interior_intersection(b)))
        .collect();
    Ok(BoxUnion { boxes })
}

pub fn translate(u: &BoxUnion, t: &[f64]) -> Result<BoxUnion, TopologyError> {
    if let Some(d) = u.dim() {
        if d != t.len() {
            return Err(TopologyError::DimensionMismatch { left: d, right: t.len() });
        }
    }
    Ok(BoxUnion { boxes: u.boxes.iter().map(|b| b.translate(t)).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(lo: f64, hi: f64) -> BoxUnion {
        BoxUnion::single(AaBox::new(vec![lo, lo], vec![hi, hi]).unwrap())
    }

    #[test]
    fn disjoint_squares_have_empty_intersection() {
        let r = box_union_intersect(&square(0.0, 1.0), &square(2.0, 3.0)).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn overlapping_squares_intersect_in_rectangle() {
        let r = box_union_intersect(&square(0.0, 2.0), &square(1.0, 3.0)).unwrap();
        assert_eq!(r, square(1.0, 2.0));
    }

    #[test]
    fn face_touching_boxes_do_not_overlap() {
        let a = square(0.0, 1.0);
        let b = BoxUnion::single(AaBox::new(vec![1.0, 0.0], vec![2.0, 1.0]).unwrap());
        assert!(box_union_intersect(&a, &b).unwrap().is_empty());
        assert!(a.overlap_witness(&b).is_none());
    }

    #[test]
    fn self_intersection_preserves_volume_of_disjoint_boxes() {
        let u = BoxUnion::new(vec![
            AaBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(),
            AaBox::new(vec![3.0, 0.0], vec![4.5, 1.0]).unwrap(),
        ])
        .unwrap();
        let r = box_union_intersect(&u, &u).unwrap();
        assert!((r.volume() - u.volume()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = square(0.0, 1.0);
        let b = BoxUnion::single(AaBox::new(vec![0.0], vec![1.0]).unwrap());
        assert!(matches!(
            box_union_intersect(&a, &b),
            Err(TopologyError::DimensionMismatch { .. })
        ));
        assert!(translate(&a, &[1.0]).is_err());
    }

    #[test]
    fn degenerate_box_is_rejected() {
        assert!(AaBox::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_translation_is_identity() {
        let u = square(-1.0, 0.5);
        assert_eq!(translate(&u, &[0.0, 0.0]).unwrap(), u);
    }

    proptest! {
        #[test]
        fn translation_roundtrip_and_volume(lo in -5.0f64..5.0, w in 0.1f64..3.0, tx in -4.0f64..4.0, ty in -4.0f64..4.0) {
            let u = BoxUnion::single(AaBox::new(vec![lo, lo], vec![lo + w, lo + 2.0 * w]).unwrap());
            let t = [tx, ty];
            let moved = translate(&u, &t).unwrap();
            let back = translate(&moved, &[-tx, -ty]).unwrap();
            for (a, b) in back.boxes[0].lo.iter().zip(&u.boxes[0].lo) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((moved.volume() - u.volume()).abs() < 1e-9 * u.volume());
        }

        #[test]
        fn intersection_witness_is_interior_to_both(a in -2.0f64..2.0, b in -2.0f64..2.0, wa in 0.2f64..2.0, wb in 0.2f64..2.0) {
            let u = BoxUnion::single(AaBox::new(vec![a, 0.0], vec![a + wa, 1.0]).unwrap());
            let v = BoxUnion::single(AaBox::new(vec![b, 0.5], vec![b + wb, 1.5]).unwrap());
            if let Some(p) = u.overlap_witness(&v) {
                prop_assert!(u.contains_interior(&p) && v.contains_interior(&p));
            }
        }
    }
}
