use std::fmt::Write as _;

use nlu_core::pipeline::AttentionRow;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One labeled cell per piece, shaded by its pooling weight.
pub fn attention_svg(rows: &[AttentionRow]) -> String {
    let (cell_w, cell_h, label_h) = (64.0, 28.0, 18.0);
    let max = rows.iter().map(|r| r.weight).fold(0.0, f64::max).max(1e-12);
    let width = cell_w * rows.len().max(1) as f64;
    let height = cell_h + 2.0 * label_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    for (i, r) in rows.iter().enumerate() {
        let x = i as f64 * cell_w;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{label_h}" width="{cell_w}" height="{cell_h}" fill="rgb(200,30,30)" fill-opacity="{:.4}" stroke="gray"/>"#,
            r.weight / max
        );
        let cx = x + cell_w / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#,
            label_h - 5.0,
            escape(&r.token)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{}" text-anchor="middle">{:.3}</text>"#,
            label_h + cell_h + 13.0,
            r.weight
        );
    }
    s.push_str("</svg>\n");
    s
}
