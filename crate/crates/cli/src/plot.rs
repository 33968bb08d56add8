use std::fmt::Write;

const SIZE: f64 = 360.0;
const PAD: f64 = 40.0;

/// Standalone SVG of a ROC polyline given as `(FAR, TPR)` pairs.
pub fn roc_svg(points: &[(f64, f64)], auc: f64) -> String {
    let full = SIZE + 2.0 * PAD;
    let map = |(x, y): (f64, f64)| (PAD + x * SIZE, PAD + (1.0 - y) * SIZE);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    );
    let _ = writeln!(svg, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{PAD}" stroke="grey" stroke-dasharray="4 4"/>"#,
        PAD + SIZE,
        PAD + SIZE
    );
    let coords: Vec<String> = points
        .iter()
        .map(|&p| {
            let (x, y) = map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        coords.join(" ")
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">APCER (attacks accepted)</text>"#,
        PAD + SIZE / 2.0,
        full - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 14 {})">1 - BPCER</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-size="14">AUC = {auc:.4}</text>"#,
        PAD + SIZE - 8.0,
        PAD + SIZE - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}
