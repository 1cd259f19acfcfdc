use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::evaluate::{EvalReport, QueryResult};
use crate::error::Result;

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "checkpoint: {}  part: {}  mode: {:?}  candidates: {:?}  decoder: {:?}  beam: {}  ranking: {}",
            self.checkpoint,
            self.part,
            c.mode,
            c.candidates,
            c.decoder,
            c.beam_width,
            if c.filtered { "filtered" } else { "raw" }
        );
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8} {:>8}", "lang", "queries", "H@1", "H@3", "H@10");
        for l in &self.per_language {
            let _ = writeln!(
                s,
                "{:<12} {:>8} {:>8.2} {:>8.2} {:>8.2}",
                l.lang, l.queries, l.hits.hits1, l.hits.hits3, l.hits.hits10
            );
        }
        let m = &self.macro_avg;
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>8.2} {:>8.2} {:>8.2}",
            "AVG", self.queries, m.hits1, m.hits3, m.hits10
        );
        if !self.length_buckets.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>8} {:>8}", "answer len", "queries", "H@1", "H@3", "H@10");
            for b in &self.length_buckets {
                let _ = writeln!(
                    s,
                    "{:<12} {:>8} {:>8.2} {:>8.2} {:>8.2}{}",
                    b.length,
                    b.count,
                    b.hits.hits1,
                    b.hits.hits3,
                    b.hits.hits10,
                    if b.excluded { "  (excluded)" } else { "" }
                );
            }
        }
        s
    }

    /// Bar chart of Hits@1 and Hits@10 per included answer-length bucket.
    pub fn to_svg(&self) -> String {
        let buckets: Vec<_> = self.length_buckets.iter().filter(|b| !b.excluded).collect();
        let (w, h, pad) = (60.0 * buckets.len().max(1) as f64 + 80.0, 260.0, 40.0);
        let plot_h = h - 2.0 * pad;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="{pad}" y="16">Hits@1 / Hits@10 by answer length</text>"#);
        let base = h - pad;
        let _ = writeln!(
            s,
            r##"<line x1="{pad}" y1="{base}" x2="{}" y2="{base}" stroke="#000"/>"##,
            w - 10.0
        );
        for (i, b) in buckets.iter().enumerate() {
            let x = pad + 10.0 + 60.0 * i as f64;
            for (j, (v, color)) in [(b.hits.hits1, "#4c72b0"), (b.hits.hits10, "#dd8452")].iter().enumerate() {
                let bh = plot_h * v / 100.0;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="20" height="{:.1}" fill="{color}"/>"#,
                    x + 22.0 * j as f64,
                    base - bh,
                    bh
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{} (n={})</text>"#,
                x,
                base + 14.0,
                b.length,
                b.count
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Writes one JSON line per query.
pub fn write_predictions(results: &[QueryResult], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in results {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
