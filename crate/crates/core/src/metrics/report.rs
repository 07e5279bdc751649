use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::{MetricsError, ScoreTable};

/// One summary line in the layout of a method-comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow<'a> {
    pub method: &'a str,
    pub table: &'a ScoreTable,
}

/// Header: `method, mean_dsc, dsc_<class>..., mean_iou, iou_<class>...`.
pub fn write_score_csv<W: Write>(
    out: W,
    rows: &[ScoreRow<'_>],
    class_names: &[&str],
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method".to_string(), "mean_dsc".to_string()];
    header.extend(class_names.iter().map(|c| format!("dsc_{c}")));
    header.push("mean_iou".into());
    header.extend(class_names.iter().map(|c| format!("iou_{c}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.method.to_string(), fmt(r.table.mean_dsc)];
        rec.extend(r.table.class_dsc.iter().map(|&v| fmt(v)));
        rec.push(fmt(r.table.mean_iou));
        rec.extend(r.table.class_iou.iter().map(|&v| fmt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-image scores: `image, mean_dsc, dsc_<class>..., mean_iou, iou_<class>...`.
pub fn write_image_csv<W: Write>(
    out: W,
    table: &ScoreTable,
    class_names: &[&str],
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["image".to_string(), "mean_dsc".to_string()];
    header.extend(class_names.iter().map(|c| format!("dsc_{c}")));
    header.push("mean_iou".into());
    header.extend(class_names.iter().map(|c| format!("iou_{c}")));
    w.write_record(&header)?;
    for s in &table.images {
        let mut rec = vec![s.name.clone(), fmt(s.mean_dsc())];
        rec.extend(s.dsc.iter().map(|&v| fmt(v)));
        rec.push(fmt(s.mean_iou()));
        rec.extend(s.iou.iter().map(|&v| fmt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Fixed-width text rendering of the summary rows, three decimals.
pub fn pretty_table(rows: &[ScoreRow<'_>], class_names: &[&str]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut s = String::new();
    let _ = write!(s, "{:<width$}  {:>8}", "Method", "Mean DSC");
    for c in class_names {
        let _ = write!(s, "  {:>10}", format!("DSC {}", abbreviate(c)));
    }
    let _ = write!(s, "  {:>8}", "Mean IoU");
    for c in class_names {
        let _ = write!(s, "  {:>10}", format!("IoU {}", abbreviate(c)));
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<width$}  {:>8.3}", r.method, r.table.mean_dsc);
        for v in &r.table.class_dsc {
            let _ = write!(s, "  {v:>10.3}");
        }
        let _ = write!(s, "  {:>8.3}", r.table.mean_iou);
        for v in &r.table.class_iou {
            let _ = write!(s, "  {v:>10.3}");
        }
        s.push('\n');
    }
    s
}

fn abbreviate(name: &str) -> String {
    name.chars()
        .next()
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate, ImageScores};

    #[test]
    fn perfect_row_is_all_ones() {
        let t = aggregate(vec![ImageScores {
            name: "a".into(),
            dsc: vec![1.0; 3],
            iou: vec![1.0; 3],
        }])
        .unwrap();
        let mut buf = Vec::new();
        let names = ["myocyte", "background", "fibrosis"];
        write_score_csv(
            &mut buf,
            &[ScoreRow {
                method: "cnn",
                table: &t,
            }],
            &names,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,mean_dsc,dsc_myocyte,dsc_background,dsc_fibrosis,mean_iou,iou_myocyte,iou_background,iou_fibrosis"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "cnn");
        assert!(row[1..].iter().all(|v| v.parse::<f64>().unwrap() == 1.0));
        assert!(pretty_table(
            &[ScoreRow {
                method: "cnn",
                table: &t
            }],
            &names
        )
        .contains("1.000"));
    }
}
