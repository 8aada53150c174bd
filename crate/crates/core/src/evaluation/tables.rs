//! Ratio-by-configuration tables: one row per sampling ratio (descending), one
//! PA/DICE column pair per configuration, in first-seen order.

use super::MetricRow;

struct Grid {
    columns: Vec<String>,
    ratios: Vec<f64>,
    cells: Vec<Vec<Option<(f64, f64)>>>,
}

fn column_key(row: &MetricRow, vary: [bool; 3]) -> String {
    let parts = [&row.method, &row.modulation, &row.training];
    let picked: Vec<&str> = parts.iter().zip(vary).filter(|(_, v)| *v).map(|(p, _)| p.as_str()).collect();
    if picked.is_empty() {
        row.method.clone()
    } else {
        picked.join(" ")
    }
}

fn grid(rows: &[MetricRow]) -> Grid {
    let differs = |f: fn(&MetricRow) -> &String| rows.iter().any(|r| f(r) != f(&rows[0]));
    let vary = [differs(|r| &r.method), differs(|r| &r.modulation), differs(|r| &r.training)];
    let mut columns: Vec<String> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    for r in rows {
        let k = column_key(r, vary);
        if !columns.contains(&k) {
            columns.push(k);
        }
        if !ratios.contains(&r.sampling_ratio) {
            ratios.push(r.sampling_ratio);
        }
    }
    ratios.sort_by(|a, b| b.total_cmp(a));
    let mut cells = vec![vec![None; columns.len()]; ratios.len()];
    for r in rows {
        let i = ratios.iter().position(|&x| x == r.sampling_ratio).unwrap();
        let j = columns.iter().position(|c| *c == column_key(r, vary)).unwrap();
        cells[i][j] = Some((r.pa, r.dice));
    }
    Grid { columns, ratios, cells }
}

fn table(rows: &[MetricRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let g = grid(rows);
    let mut header = vec!["Sampling ratio".to_string()];
    for c in &g.columns {
        header.push(format!("{c} PA"));
        header.push(format!("{c} DICE"));
    }
    let body = g
        .ratios
        .iter()
        .zip(&g.cells)
        .map(|(ratio, cells)| {
            let mut line = vec![format!("{ratio}")];
            for cell in cells {
                match cell {
                    Some((pa, dice)) => {
                        line.push(format!("{pa:.2}"));
                        line.push(format!("{dice:.2}"));
                    }
                    None => line.extend(["-".to_string(), "-".to_string()]),
                }
            }
            line
        })
        .collect();
    (header, body)
}

/// Aligned plain-text table.
pub fn render_plain(rows: &[MetricRow]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let (header, body) = table(rows);
    let widths: Vec<usize> = (0..header.len())
        .map(|j| body.iter().map(|l| l[j].len()).chain([header[j].len()]).max().unwrap())
        .collect();
    let fmt = |line: &[String]| {
        line.iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = fmt(&header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for l in &body {
        out.push_str(&fmt(l));
        out.push('\n');
    }
    out
}

pub fn render_markdown(rows: &[MetricRow]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let (header, body) = table(rows);
    let mut out = format!("| {} |\n", header.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for l in &body {
        out.push_str(&format!("| {} |\n", l.join(" | ")));
    }
    out
}
