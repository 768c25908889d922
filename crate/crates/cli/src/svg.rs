//! SVG rendering of a trace frame with its stage polygons.

use std::fmt::Write as _;

use scenario_core::sim::ParsedTrace;

pub struct PolygonRecord {
    pub cycle: usize,
    pub stage: usize,
    pub vertices: Vec<(f64, f64)>,
    pub support: Vec<(f64, f64)>,
}

fn parse_points(field: &str) -> Result<Vec<(f64, f64)>, String> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|p| {
            let mut it = p.split(' ');
            let x = it.next().and_then(|v| v.parse().ok());
            let y = it.next().and_then(|v| v.parse().ok());
            match (x, y, it.next()) {
                (Some(x), Some(y), None) => Ok((x, y)),
                _ => Err(format!("bad point {p:?}")),
            }
        })
        .collect()
}

/// Parses a polygon dump; errors carry the 1-based line number.
pub fn parse_polytopes(text: &str) -> Result<Vec<PolygonRecord>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let err = |m: String| (i + 1, m);
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad integer {s:?}")));
        int(f[2])?;
        out.push(PolygonRecord {
            cycle: int(f[0])?,
            stage: int(f[1])?,
            vertices: parse_points(f[3]).map_err(err)?,
            support: parse_points(f[4]).map_err(err)?,
        });
    }
    Ok(out)
}

const SCALE: f64 = 50.0;

pub fn render(trace: &ParsedTrace, polygons: &[PolygonRecord], cycle: usize, disc_radius: f64, course: f64) -> String {
    let (x0, x1, y0, y1) = (-1.0, course + 1.0, -4.0, 4.0);
    let px = |x: f64| (x - x0) * SCALE;
    let py = |y: f64| (y1 - y) * SCALE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        (x1 - x0) * SCALE,
        (y1 - y0) * SCALE,
        (x1 - x0) * SCALE,
        (y1 - y0) * SCALE
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="6 4"/>"#,
        px(0.0),
        py(0.0),
        px(course),
        py(0.0)
    );

    let frame: Vec<&PolygonRecord> = polygons.iter().filter(|p| p.cycle == cycle).collect();
    let stages = frame.iter().map(|p| p.stage).max().unwrap_or(1).max(1);
    for p in &frame {
        let shade = 1.0 - 0.8 * (p.stage - 1) as f64 / stages as f64;
        let pts: Vec<String> = p.vertices.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="rgb(60,120,220)" fill-opacity="0.04" stroke="rgb(60,120,220)" stroke-opacity="{shade:.2}" stroke-width="1"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &p.support {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="rgb(220,60,60)" fill-opacity="{shade:.2}"/>"#, px(x), py(y));
        }
    }

    let path: Vec<String> = trace.rows.iter().map(|r| format!("{:.1},{:.1}", px(r.state.pos.x), py(r.state.pos.y))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#, path.join(" "));
    let peds = trace.rows.first().map_or(0, |r| r.pedestrians.len());
    for i in 0..peds {
        let pts: Vec<String> = trace
            .rows
            .iter()
            .map(|r| format!("{:.1},{:.1}", px(r.pedestrians[i].x), py(r.pedestrians[i].y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="rgb(230,140,30)" stroke-opacity="0.6"/>"#, pts.join(" "));
    }
    if let Some(r) = trace.rows.iter().find(|r| r.cycle == cycle) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" fill="black" fill-opacity="0.3" stroke="black"/>"#,
            px(r.state.pos.x),
            py(r.state.pos.y),
            disc_radius * SCALE
        );
        for p in &r.pedestrians {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="rgb(230,140,30)"/>"#, px(p.x), py(p.y));
        }
        let _ = writeln!(
            s,
            r#"<text x="10" y="20" font-family="monospace" font-size="14">cycle {} t={:.2}s risk={:.2e}</text>"#,
            r.cycle, r.time, r.stage1_risk
        );
    }
    s.push_str("</svg>\n");
    s
}
