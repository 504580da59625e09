use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Per-pixel Sobel gradient magnitude `sqrt(gx² + gy²)` with edge replication.
///
/// ```text
///      [-1 0 1]        [-1 -2 -1]
/// gx = [-2 0 2]   gy = [ 0  0  0]
///      [-1 0 1]        [ 1  2  1]
/// ```
pub fn sobel_gradient_magnitude(plane: &Plane) -> Result<Plane> {
    let (w, h) = plane.dims();
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!(
            "Sobel needs at least 3x3 samples, got {w}x{h}"
        )));
    }
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, dst) in row.iter_mut().enumerate() {
            let x = x as isize;
            let p = |dx: isize, dy: isize| plane.get_clamped(x + dx, y + dy) as f64;
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            *dst = gx.hypot(gy) as f32;
        }
    });
    Plane::new(w, h, out)
}
