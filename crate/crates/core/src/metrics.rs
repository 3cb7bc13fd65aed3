//! Reconstruction and segmentation quality measures.

use crate::error::{Error, Result};
use crate::types::{dist, HardSegmentation, RealImage};

/// Which PSNR formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsnrVariant {
    /// `10 log10(max(u_gt) / (||u_gt - u|| / N))`, the unsquared form.
    Unsquared,
    /// `10 log10(max(u_gt)^2 N / ||u_gt - u||^2)`.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub rre: f64,
    pub psnr_unsquared: f64,
    pub psnr_standard: f64,
    pub rse: f64,
}

/// `||u_gt - u|| / ||u_gt||`.
pub fn rre(u: &RealImage, u_gt: &RealImage) -> Result<f64> {
    u.grid().ensure_same(&u_gt.grid())?;
    let scale = u_gt.norm();
    if scale == 0.0 {
        return Err(Error::InvalidArgument("relative error against a zero image".into()));
    }
    Ok(dist(u.values(), u_gt.values()) / scale)
}

/// PSNR in dB; `+inf` when the images are identical.
pub fn psnr(u: &RealImage, u_gt: &RealImage, variant: PsnrVariant) -> Result<f64> {
    u.grid().ensure_same(&u_gt.grid())?;
    let err = dist(u.values(), u_gt.values());
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = u_gt.max();
    let count = u_gt.values().len() as f64;
    Ok(match variant {
        PsnrVariant::Unsquared => 10.0 * (peak / (err / count)).log10(),
        PsnrVariant::Standard => 10.0 * (peak * peak * count / (err * err)).log10(),
    })
}

/// Fraction of pixels whose labels differ.
pub fn rse(seg: &HardSegmentation, seg_gt: &HardSegmentation) -> Result<f64> {
    seg.grid().ensure_same(&seg_gt.grid())?;
    let wrong = seg
        .labels()
        .iter()
        .zip(seg_gt.labels())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / seg.labels().len() as f64)
}

/// All metrics at once.
pub fn evaluate(
    u: &RealImage,
    u_gt: &RealImage,
    seg: &HardSegmentation,
    seg_gt: &HardSegmentation,
) -> Result<MetricReport> {
    Ok(MetricReport {
        rre: rre(u, u_gt)?,
        psnr_unsquared: psnr(u, u_gt, PsnrVariant::Unsquared)?,
        psnr_standard: psnr(u, u_gt, PsnrVariant::Standard)?,
        rse: rse(seg, seg_gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Grid;

    fn img(g: Grid, f: impl Fn(usize, usize) -> f64) -> RealImage {
        RealImage::from_fn(g, f)
    }

    #[test]
    fn rre_basics() {
        let g = Grid::new(4, 5).unwrap();
        let gt = img(g, |r, c| (r * 5 + c) as f64 - 3.0);
        assert_eq!(rre(&gt, &gt).unwrap(), 0.0);
        assert_eq!(rre(&RealImage::zeros(g), &gt).unwrap(), 1.0);
        let scaled = img(g, |r, c| 1.1 * gt.get(r, c));
        assert!((rre(&scaled, &gt).unwrap() - 0.1).abs() < 1e-14);
        assert!(rre(&gt, &RealImage::zeros(g)).is_err());
    }

    #[test]
    fn psnr_unsquared_formula() {
        let g = Grid::new(64, 64).unwrap();
        let gt = img(g, |r, c| if r == 0 && c == 0 { 1.0 } else { 0.0 });
        // error norm 4.096 spread over 16 pixels: 16 * 1.024^2 = 4.096^2
        let u = img(g, |r, c| gt.get(r, c) + if r == 5 && c < 16 { 1.024 } else { 0.0 });
        assert!((dist(u.values(), gt.values()) - 4.096).abs() < 1e-12);
        assert!((psnr(&u, &gt, PsnrVariant::Unsquared).unwrap() - 30.0).abs() < 1e-10);
        let u2 = img(g, |r, c| gt.get(r, c) + 2.0 * (u.get(r, c) - gt.get(r, c)));
        let drop = psnr(&u, &gt, PsnrVariant::Unsquared).unwrap() - psnr(&u2, &gt, PsnrVariant::Unsquared).unwrap();
        assert!((drop - 10.0 * 2.0f64.log10()).abs() < 1e-10);
        assert_eq!(psnr(&gt, &gt, PsnrVariant::Standard).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_standard_tracks_rre() {
        let g = Grid::new(8, 8).unwrap();
        let gt = img(g, |r, c| ((r + c) % 3) as f64);
        let a = img(g, |r, c| gt.get(r, c) + 0.01 * (r as f64));
        let b = img(g, |r, c| gt.get(r, c) + 0.02 * (r as f64));
        assert!(rre(&a, &gt).unwrap() < rre(&b, &gt).unwrap());
        assert!(psnr(&a, &gt, PsnrVariant::Standard).unwrap() > psnr(&b, &gt, PsnrVariant::Standard).unwrap());
    }

    #[test]
    fn rse_counts_mismatches() {
        let g = Grid::new(10, 10).unwrap();
        let gt = HardSegmentation::new(g, 2, vec![0; 100]).unwrap();
        assert_eq!(rse(&gt, &gt).unwrap(), 0.0);
        let flipped = HardSegmentation::new(g, 2, vec![1; 100]).unwrap();
        assert_eq!(rse(&flipped, &gt).unwrap(), 1.0);
        let mut labels = vec![0; 100];
        labels[3] = 1;
        labels[50] = 1;
        labels[99] = 1;
        let three = HardSegmentation::new(g, 2, labels).unwrap();
        assert_eq!(rse(&three, &gt).unwrap(), 0.03);
        let other = HardSegmentation::new(Grid::new(5, 20).unwrap(), 2, vec![0; 100]).unwrap();
        assert!(rse(&other, &gt).is_err());
    }

    #[test]
    fn relabel_leaves_rse_unchanged() {
        let g = Grid::new(4, 4).unwrap();
        let a = HardSegmentation::new(g, 3, (0..16).map(|i| i % 3).collect()).unwrap();
        let b = HardSegmentation::new(g, 3, (0..16).map(|i| (i / 2) % 3).collect()).unwrap();
        let map = [2, 0, 1];
        let relabel = |s: &HardSegmentation| {
            HardSegmentation::new(g, 3, s.labels().iter().map(|&l| map[l]).collect()).unwrap()
        };
        assert_eq!(rse(&a, &b).unwrap(), rse(&relabel(&a), &relabel(&b)).unwrap());
    }
}
