use nalgebra::Vector3;

use super::RenderError;

/// Per-axis min-max normalization of vertex positions, X/Y/Z to R/G/B.
/// Axes with zero extent map to 0.5.
pub fn pncc_colors(vertices: &[Vector3<f64>]) -> Result<Vec<[f64; 3]>, RenderError> {
    if vertices.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(RenderError::NonFinite);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in vertices {
        for axis in 0..3 {
            lo[axis] = lo[axis].min(v[axis]);
            hi[axis] = hi[axis].max(v[axis]);
        }
    }
    Ok(vertices
        .iter()
        .map(|v| {
            std::array::from_fn(|axis| {
                let extent = hi[axis] - lo[axis];
                if extent > 0.0 {
                    ((v[axis] - lo[axis]) / extent).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
        })
        .collect())
}

/// Viridis sampled at nine evenly spaced stops; linear interpolation between.
pub const VIRIDIS_STOPS: [[f64; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.128729, 0.563265, 0.551229],
    [0.134692, 0.658636, 0.517649],
    [0.266941, 0.748751, 0.440573],
    [0.993248, 0.906157, 0.143936],
];

pub fn viridis(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let segments = (VIRIDIS_STOPS.len() - 1) as f64;
    let x = t * segments;
    let i = (x.floor() as usize).min(VIRIDIS_STOPS.len() - 2);
    let frac = x - i as f64;
    let (a, b) = (VIRIDIS_STOPS[i], VIRIDIS_STOPS[i + 1]);
    std::array::from_fn(|c| a[c] + (b[c] - a[c]) * frac)
}

/// Vertex-index colormap: vertex `i` of `count` maps `i / (count - 1)`
/// through [`viridis`].
pub fn vertex_id_colors(count: usize) -> Result<Vec<[f64; 3]>, RenderError> {
    if count == 0 {
        return Err(RenderError::EmptyMesh);
    }
    if count == 1 {
        return Ok(vec![viridis(0.0)]);
    }
    let denom = (count - 1) as f64;
    Ok((0..count).map(|i| viridis(i as f64 / denom)).collect())
}
