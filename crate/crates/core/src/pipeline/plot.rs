//! Standalone SVG rendering of a two-dimensional certificate: grid cells of
//! `𝒳` in grey, the level-set ellipse and closed-loop trajectories.

use std::fmt::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::invariance::{PiCertificate, Trajectory};

const SIZE: f64 = 560.0;
const PAD: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * SIZE
    }

    fn py(&self, y: f64) -> f64 {
        PAD + (self.y1 - y) / (self.y1 - self.y0) * SIZE
    }
}

pub fn render_certificate_svg(
    cert: &PiCertificate,
    p: &DMatrix<f64>,
    trajectories: &[Trajectory],
    title: &str,
) -> Result<String> {
    if cert.grid.dim() != 2 || p.shape() != (2, 2) {
        return Err(Error::Input("plots are only drawn for two-dimensional states".into()));
    }
    let (x0, x1) = cert.grid.bounds[0];
    let (y0, y1) = cert.grid.bounds[1];
    let f = Frame { x0, x1, y0, y1 };
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));

    let (hx, hy) = (cert.grid.step(0), cert.grid.step(1));
    let (cw, ch) = (hx / (x1 - x0) * SIZE, hy / (y1 - y0) * SIZE);
    let _ = writeln!(s, r##"<g fill="#b0b0b0" stroke="none">"##);
    for (i, pt) in cert.values.iter().enumerate() {
        if pt.decrease <= 0.0 {
            let c = cert.grid.point(i);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
                f.px(c[0] - hx / 2.0),
                f.py(c[1] + hy / 2.0),
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    let _ = writeln!(s, "</g>");

    // ℛ_γ boundary: x = sqrt(γ) V diag(sqrt λ) [cos θ, sin θ]
    let eig = nalgebra::SymmetricEigen::new(p.clone());
    let pts: Vec<String> = (0..=240)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / 240.0;
            let u = nalgebra::Vector2::new(
                eig.eigenvalues[0].max(0.0).sqrt() * th.cos(),
                eig.eigenvalues[1].max(0.0).sqrt() * th.sin(),
            );
            let x = &eig.eigenvectors * u * cert.gamma.sqrt();
            format!("{:.2},{:.2}", f.px(x[0]), f.py(x[1]))
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#4a78c8" fill-opacity="0.25" stroke="#1f4fa0" stroke-width="1.5"/>"##,
        pts.join(" ")
    );

    for t in trajectories {
        let pts: Vec<String> = t
            .states
            .iter()
            .map(|x| format!("{:.2},{:.2}", f.px(x[0]), f.py(x[1])))
            .collect();
        let color = if t.diverged { "#c0392b" } else { "#222222" };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.8"/>"#,
            pts.join(" ")
        );
        if let Some(first) = t.states.first() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#,
                f.px(first[0]),
                f.py(first[1])
            );
        }
    }

    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fr = k as f64 / 4.0;
        let (vx, vy) = (x0 + fr * (x1 - x0), y0 + fr * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{vx:.2}</text>"#,
            f.px(vx),
            PAD + SIZE + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{vy:.2}</text>"#,
            PAD - 6.0,
            f.py(vy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">x1</text>"#,
        PAD + SIZE / 2.0,
        total - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {:.1})">x2</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="30" font-size="14" text-anchor="middle">{} (γ = {}, {})</text>"#,
        PAD + SIZE / 2.0,
        escape(title),
        cert.gamma,
        cert.verdict
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
