//! Plain-text renderings of integrated robot paths.

use std::fmt::Write;

use super::{integrate_se2, Trajectory};
use crate::error::Result;

const SVG_SIZE: f64 = 480.0;
const SVG_MARGIN: f64 = 20.0;
const MARKERS: usize = 10;

/// `trajectory,step,x,z,heading` rows for every integrated pose.
pub fn trace_csv(trajs: &[Trajectory]) -> Result<String> {
    let mut out = String::from("trajectory,step,x,z,heading\n");
    for (i, t) in trajs.iter().enumerate() {
        for (k, (x, z, h)) in integrate_se2(t)?.into_iter().enumerate() {
            writeln!(out, "{i},{k},{x},{z},{h}").expect("writing to a String");
        }
    }
    Ok(out)
}

/// One polyline per trajectory plus markers whose opacity grows with time.
pub fn trace_svg(trajs: &[Trajectory]) -> Result<String> {
    let paths = trajs.iter().map(integrate_se2).collect::<Result<Vec<_>>>()?;
    let (mut lo_x, mut hi_x, mut lo_z, mut hi_z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &(x, z, _) in paths.iter().flatten() {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_z = lo_z.min(z);
        hi_z = hi_z.max(z);
    }
    let span = (hi_x - lo_x).max(hi_z - lo_z).max(1e-9);
    let scale = (SVG_SIZE - 2.0 * SVG_MARGIN) / span;
    // World +z is drawn upward.
    let px = |x: f64| SVG_MARGIN + (x - lo_x) * scale;
    let py = |z: f64| SVG_SIZE - SVG_MARGIN - (z - lo_z) * scale;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">\n"
    );
    for (i, path) in paths.iter().enumerate() {
        let hue = (i * 137) % 360;
        let points: Vec<String> = path.iter().map(|&(x, z, _)| format!("{:.2},{:.2}", px(x), py(z))).collect();
        writeln!(
            svg,
            "  <polyline fill=\"none\" stroke=\"hsl({hue},70%,40%)\" stroke-width=\"2\" points=\"{}\"/>",
            points.join(" ")
        )
        .expect("writing to a String");
        let n = path.len();
        for m in 0..MARKERS.min(n) {
            let k = if MARKERS.min(n) == 1 { n - 1 } else { m * (n - 1) / (MARKERS.min(n) - 1) };
            let (x, z, _) = path[k];
            let opacity = (k + 1) as f64 / n as f64;
            writeln!(
                svg,
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"hsl({hue},70%,40%)\" fill-opacity=\"{opacity:.3}\"/>",
                px(x),
                py(z)
            )
            .expect("writing to a String");
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Embodiment;

    fn straight() -> Trajectory {
        Trajectory::new(Embodiment::Robot, 0.1, vec![vec![1.0, 0.0, 0.0]; 10]).unwrap()
    }

    #[test]
    fn csv_has_every_integrated_pose() {
        let csv = trace_csv(&[straight(), straight()]).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 11);
        let last: Vec<f64> = csv.lines().nth(11).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(&last[..2], &[0.0, 10.0]);
        assert!((last[2] - 1.0).abs() < 1e-12 && last[3] == 0.0);
    }

    #[test]
    fn straight_line_is_one_flat_polyline() {
        let svg = trace_svg(&[straight()]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.iter().all(|y| *y == ys[0]));
        let human = Trajectory::new(Embodiment::Human { joints: 5 }, 0.1, vec![vec![0.0; 59]]).unwrap();
        assert!(trace_svg(&[human]).is_err());
    }
}
