//! Soft segmentation masks: a float grid in [0,1] with a binarization
//! threshold carried alongside.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<f32>,
    threshold: f32,
}

impl Mask {
    pub const DEFAULT_THRESHOLD: f32 = 0.5;

    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Mask> {
        if data.len() != h * w {
            return Err(Error::shape("mask", format!("{}x{} vs {} values", h, w, data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArg("mask values must lie in [0,1]".into()));
        }
        Ok(Mask { h, w, data, threshold: Self::DEFAULT_THRESHOLD })
    }

    pub fn zeros(h: usize, w: usize) -> Mask {
        Mask { h, w, data: vec![0.0; h * w], threshold: Self::DEFAULT_THRESHOLD }
    }

    pub fn filled(h: usize, w: usize, v: f32) -> Result<Mask> {
        Mask::new(h, w, vec![v; h * w])
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[y * self.w + x] = v;
    }

    /// Foreground test against the stored threshold.
    pub fn is_fg(&self, y: usize, x: usize) -> bool {
        self.get(y, x) >= self.threshold
    }

    /// Hard 0/1 copy under the stored threshold.
    pub fn binarized(&self) -> Mask {
        let data = self.data.iter().map(|&v| if v >= self.threshold { 1.0 } else { 0.0 }).collect();
        Mask { h: self.h, w: self.w, data, threshold: self.threshold }
    }

    pub fn fg_count(&self) -> usize {
        self.data.iter().filter(|&&v| v >= self.threshold).count()
    }

    fn check_same_size(&self, other: &Mask, op: &'static str) -> Result<()> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {}x{}", self.h, self.w, other.h, other.w),
            ));
        }
        Ok(())
    }

    /// Binarized elementwise max.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.check_same_size(other, "mask union")?;
        let a = self.binarized();
        let b = other.binarized();
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x.max(y)).collect();
        Ok(Mask { h: self.h, w: self.w, data, threshold: self.threshold })
    }

    /// Binarized elementwise min.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        self.check_same_size(other, "mask intersect")?;
        let a = self.binarized();
        let b = other.binarized();
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x.min(y)).collect();
        Ok(Mask { h: self.h, w: self.w, data, threshold: self.threshold })
    }

    /// 1 - v on the binarized view.
    pub fn complement(&self) -> Mask {
        let b = self.binarized();
        let data = b.data.iter().map(|&v| 1.0 - v).collect();
        Mask { h: self.h, w: self.w, data, threshold: self.threshold }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_shape() {
        assert!(Mask::new(2, 2, vec![0.0, 0.5, 1.0, 1.1]).is_err());
        assert!(Mask::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Mask::new(2, 2, vec![0.0, 0.5, 1.0, 0.25]).is_ok());
    }

    #[test]
    fn binarize_uses_half_threshold_inclusive() {
        let m = Mask::new(1, 4, vec![0.0, 0.49, 0.5, 1.0]).unwrap();
        assert_eq!(m.binarized().data(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(m.fg_count(), 2);
    }

    #[test]
    fn set_algebra() {
        let a = Mask::new(1, 3, vec![0.9, 0.2, 0.6]).unwrap();
        let b = Mask::new(1, 3, vec![0.1, 0.8, 0.7]).unwrap();
        assert_eq!(a.union(&b).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(a.intersect(&b).unwrap().data(), &[0.0, 0.0, 1.0]);
        assert_eq!(a.complement().data(), &[0.0, 1.0, 0.0]);
        let c = Mask::zeros(2, 2);
        assert!(a.union(&c).is_err());
    }
}
