use super::{RawFrame, CHANNELS};
use crate::error::{Error, Result};
use crate::plane::Plane;

/// Center-crop to the target aspect ratio, then area-average down to
/// `width`×`height` plane pixels. Upsampling is rejected.
pub fn center_crop_resize(frame: &RawFrame, width: usize, height: usize) -> Result<RawFrame> {
    let (w, h) = frame.dims();
    if width == 0 || height == 0 {
        return Err(Error::invalid("target resolution must be nonzero"));
    }
    if width > w || height > h {
        return Err(Error::invalid(format!(
            "target {width}x{height} exceeds frame {w}x{h}"
        )));
    }
    // Largest window with the target aspect ratio.
    let (cw, ch) = if w * height >= h * width {
        (h * width / height, h)
    } else {
        (w, w * height / width)
    };
    let cropped = frame.crop((w - cw) / 2, (h - ch) / 2, cw, ch)?;
    if (cw, ch) == (width, height) {
        return Ok(cropped);
    }
    let planes: [Plane; CHANNELS] =
        std::array::from_fn(|c| area_resample(cropped.plane(c), width, height));
    RawFrame::new(planes, frame.meta.clone())
}

/// Overlap weights of each output cell onto source cells along one axis.
fn footprints(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((j, overlap / scale));
                }
                j += 1;
            }
            taps
        })
        .collect()
}

fn area_resample(plane: &Plane, width: usize, height: usize) -> Plane {
    let fx = footprints(plane.width(), width);
    let fy = footprints(plane.height(), height);
    Plane::from_fn(width, height, |x, y| {
        let mut acc = 0.0f64;
        for &(sy, wy) in &fy[y] {
            for &(sx, wx) in &fx[x] {
                acc += wy * wx * plane.get(sx, sy) as f64;
            }
        }
        acc.clamp(0.0, 1.0) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::CameraMeta;

    #[test]
    fn integer_factor_is_box_average() {
        let planes: [Plane; 4] = std::array::from_fn(|c| {
            Plane::from_fn(4, 4, |x, y| ((x + 4 * y + c) % 5) as f32 / 10.0)
        });
        let f = RawFrame::new(planes, CameraMeta::normalized("t")).unwrap();
        let r = center_crop_resize(&f, 2, 2).unwrap();
        for c in 0..4 {
            for y in 0..2 {
                for x in 0..2 {
                    let p = f.plane(c);
                    let want = (p.get(2 * x, 2 * y) as f64
                        + p.get(2 * x + 1, 2 * y) as f64
                        + p.get(2 * x, 2 * y + 1) as f64
                        + p.get(2 * x + 1, 2 * y + 1) as f64)
                        / 4.0;
                    assert!((r.plane(c).get(x, y) as f64 - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn crops_to_aspect_and_preserves_constants() {
        let f = RawFrame::constant(10, 4, [0.25; 4], CameraMeta::normalized("t")).unwrap();
        let r = center_crop_resize(&f, 3, 3).unwrap();
        assert_eq!(r.dims(), (3, 3));
        assert!(r
            .plane(0)
            .as_slice()
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-6));
        assert!(center_crop_resize(&f, 11, 3).is_err());
    }
}
