//! Artifact rendering: CSV tables of per-step moments and Monte Carlo
//! trajectories, and a standalone SVG of the steering run.
//!
//! The SVG is pure presentation — every number it draws also appears in the
//! CSV files (moments, trajectories, targets), so plots can be regenerated
//! from the tables alone.

use covsteer::{Mat64, SymMat64, Vect64};
use std::fmt::Write as _;

/// Header + one row per step: `k, mu_1..mu_n, sigma_11..sigma_nn` with the
/// covariance stored as the row-major upper triangle.
pub fn moments_csv(means: &[Vect64], covs: &[SymMat64]) -> String {
    assert_eq!(means.len(), covs.len());
    let n = means.first().map_or(0, Vect64::len);
    let mut out = String::from("k");
    for i in 1..=n {
        write!(out, ",mu_{i}").unwrap();
    }
    for i in 1..=n {
        for j in i..=n {
            write!(out, ",sigma_{i}{j}").unwrap();
        }
    }
    out.push('\n');
    for (k, (mu, cov)) in means.iter().zip(covs.iter()).enumerate() {
        write!(out, "{k}").unwrap();
        for i in 0..n {
            write!(out, ",{}", mu[i]).unwrap();
        }
        for i in 0..n {
            for j in i..n {
                write!(out, ",{}", cov.as_mat()[(i, j)]).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Header + one row per (trial, step): `trial, k, x_1..x_n`.
pub fn trials_csv(paths: &[Vec<Vect64>]) -> String {
    let n = paths.first().and_then(|p| p.first()).map_or(0, Vect64::len);
    let mut out = String::from("trial,k");
    for i in 1..=n {
        write!(out, ",x_{i}").unwrap();
    }
    out.push('\n');
    for (trial, path) in paths.iter().enumerate() {
        for (k, x) in path.iter().enumerate() {
            write!(out, "{trial},{k}").unwrap();
            for i in 0..n {
                write!(out, ",{}", x[i]).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Boundary moments in the same schema as [`moments_csv`]: row `k = 0` is the
/// initial distribution, row `k = N` the terminal target.
pub fn targets_csv(
    init_mean: &Vect64,
    init_cov: &SymMat64,
    terminal_mean: &Vect64,
    terminal_cov: &SymMat64,
    horizon: usize,
) -> String {
    let n = init_mean.len();
    let mut out = String::from("k");
    for i in 1..=n {
        write!(out, ",mu_{i}").unwrap();
    }
    for i in 1..=n {
        for j in i..=n {
            write!(out, ",sigma_{i}{j}").unwrap();
        }
    }
    out.push('\n');
    for (k, mu, cov) in [
        (0usize, init_mean, init_cov),
        (horizon, terminal_mean, terminal_cov),
    ] {
        write!(out, "{k}").unwrap();
        for i in 0..n {
            write!(out, ",{}", mu[i]).unwrap();
        }
        for i in 0..n {
            for j in i..n {
                write!(out, ",{}", cov.as_mat()[(i, j)]).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Boundary of the 3σ region `(x − μ)ᵀ Σ⁻¹ (x − μ) = 9` as a closed polygon
/// in world coordinates.
fn ellipse_points(mean: &Vect64, cov: &Mat64, samples: usize) -> Vec<(f64, f64)> {
    let eig = cov.clone().symmetric_eigen();
    let a1 = 3.0 * eig.eigenvalues[0].max(0.0).sqrt();
    let a2 = 3.0 * eig.eigenvalues[1].max(0.0).sqrt();
    let v1 = eig.eigenvectors.column(0).into_owned();
    let v2 = eig.eigenvectors.column(1).into_owned();
    (0..=samples)
        .map(|s| {
            let theta = 2.0 * std::f64::consts::PI * s as f64 / samples as f64;
            let p = mean + &v1 * (a1 * theta.cos()) + &v2 * (a2 * theta.sin());
            (p[0], p[1])
        })
        .collect()
}

struct Canvas {
    x0: f64,
    y0: f64,
    scale: f64,
    height: f64,
}

impl Canvas {
    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            (x - self.x0) * self.scale,
            self.height - (y - self.y0) * self.scale,
        )
    }

    fn polyline(&self, pts: &[(f64, f64)], style: &str) -> String {
        let mut coords = String::new();
        for &p in pts {
            let (px, py) = self.map(p);
            write!(coords, "{px:.2},{py:.2} ").unwrap();
        }
        format!(
            "<polyline points=\"{}\" fill=\"none\" {style}/>\n",
            coords.trim_end()
        )
    }
}

/// Standalone SVG of a 2-D steering run: Monte Carlo sample paths, the mean
/// trajectory, per-step 3σ covariance ellipses, and the terminal target
/// ellipse. Returns `None` when the state is not 2-dimensional.
pub fn figure_svg(
    title: &str,
    means: &[Vect64],
    covs: &[SymMat64],
    target_mean: &Vect64,
    target_cov: &SymMat64,
    sample_paths: &[Vec<Vect64>],
) -> Option<String> {
    if means.first().map_or(0, Vect64::len) != 2 || target_mean.len() != 2 {
        return None;
    }
    let samples = 72;
    let step_ellipses: Vec<Vec<(f64, f64)>> = means
        .iter()
        .zip(covs.iter())
        .map(|(mu, cov)| ellipse_points(mu, cov.as_mat(), samples))
        .collect();
    let target_ellipse = ellipse_points(target_mean, target_cov.as_mat(), samples);
    let mean_path: Vec<(f64, f64)> = means.iter().map(|mu| (mu[0], mu[1])).collect();
    let trial_paths: Vec<Vec<(f64, f64)>> = sample_paths
        .iter()
        .map(|path| path.iter().map(|x| (x[0], x[1])).collect())
        .collect();

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for pts in step_ellipses
        .iter()
        .chain(std::iter::once(&target_ellipse))
        .chain(trial_paths.iter())
        .chain(std::iter::once(&mean_path))
    {
        for &(x, y) in pts {
            xs.push(x);
            ys.push(y);
        }
    }
    let (xmin, xmax) = bounds(&xs);
    let (ymin, ymax) = bounds(&ys);
    let pad = 0.06 * ((xmax - xmin).max(ymax - ymin)).max(1e-9);
    let (xmin, xmax, ymin, ymax) = (xmin - pad, xmax + pad, ymin - pad, ymax + pad);
    let (width, height) = (840.0, 560.0);
    let scale = (width / (xmax - xmin)).min(height / (ymax - ymin));
    let canvas = Canvas {
        x0: xmin,
        y0: ymin,
        scale,
        height,
    };

    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width} {height}\" \
         width=\"{width}\" height=\"{height}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
    .unwrap();
    // Axis lines through the origin when visible.
    if xmin < 0.0 && xmax > 0.0 {
        let (px, _) = canvas.map((0.0, ymin));
        writeln!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"0\" x2=\"{px:.2}\" y2=\"{height}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>"
        )
        .unwrap();
    }
    if ymin < 0.0 && ymax > 0.0 {
        let (_, py) = canvas.map((xmin, 0.0));
        writeln!(
            svg,
            "<line x1=\"0\" y1=\"{py:.2}\" x2=\"{width}\" y2=\"{py:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>"
        )
        .unwrap();
    }
    for path in &trial_paths {
        svg.push_str(&canvas.polyline(
            path,
            "stroke=\"#9aa7b0\" stroke-width=\"0.8\" stroke-opacity=\"0.45\"",
        ));
    }
    for pts in &step_ellipses {
        svg.push_str(&canvas.polyline(pts, "stroke=\"#2b6cb0\" stroke-width=\"1.2\""));
    }
    svg.push_str(&canvas.polyline(
        &target_ellipse,
        "stroke=\"#c53030\" stroke-width=\"2\" stroke-dasharray=\"7,4\"",
    ));
    svg.push_str(&canvas.polyline(&mean_path, "stroke=\"#1a202c\" stroke-width=\"1.6\""));
    for &(x, y) in &mean_path {
        let (px, py) = canvas.map((x, y));
        writeln!(
            svg,
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.4\" fill=\"#1a202c\"/>"
        )
        .unwrap();
    }
    write!(
        svg,
        "<text x=\"14\" y=\"24\" font-family=\"monospace\" font-size=\"15\" \
         fill=\"#1a202c\">{title}</text>\n\
         <text x=\"14\" y=\"44\" font-family=\"monospace\" font-size=\"12\" \
         fill=\"#4a5568\">blue: per-step 3-sigma ellipses; red dashed: terminal target; \
         gray: sample paths</text>\n</svg>\n"
    )
    .unwrap();
    Some(svg)
}

fn bounds(xs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo > hi {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}
