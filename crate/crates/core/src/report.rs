//! Rate-distortion CSV: one row per (image, codec, rate point), plus a
//! corpus MEAN row closing every (codec, rate point) group.
//!
//! The first line is a schema comment so readers can refuse files written
//! by an incompatible version.

use thiserror::Error;

pub const RD_SCHEMA: &str = "# recompress-bench rd-csv v1";
pub const MEAN_ID: &str = "MEAN";
pub const STATUS_OK: &str = "ok";

const FIXED_COLUMNS: [&str; 8] = [
    "image_id",
    "codec",
    "target_bpp",
    "achieved_bpp",
    "qp",
    "psnr",
    "ssim",
    "mse",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing or unknown schema line, expected {RD_SCHEMA:?}")]
    Schema,
    #[error("unexpected columns: {0}")]
    Columns(String),
    #[error("line {line}: bad {column} value {value:?}")]
    BadField {
        line: u64,
        column: String,
        value: String,
    },
    #[error("unknown metric column {0:?}")]
    UnknownMetric(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdRow {
    pub image_id: String,
    pub codec: String,
    /// Empty for fixed-parameter sweeps.
    pub target_bpp: Option<f64>,
    pub achieved_bpp: Option<f64>,
    pub qp: Option<i64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub mse: Option<f64>,
    /// One slot per external metric column, in table order.
    pub external: Vec<Option<f64>>,
    pub status: String,
}

impl RdRow {
    /// A row for a point that could not be produced.
    pub fn failed(image_id: &str, codec: &str, target_bpp: Option<f64>, n_external: usize, reason: &str) -> Self {
        RdRow {
            image_id: image_id.to_string(),
            codec: codec.to_string(),
            target_bpp,
            achieved_bpp: None,
            qp: None,
            psnr: None,
            ssim: None,
            mse: None,
            external: vec![None; n_external],
            status: format!("error: {}", reason.replace(['\n', '\r'], " ")),
        }
    }

    pub fn is_mean(&self) -> bool {
        self.image_id == MEAN_ID
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RdTable {
    pub external_names: Vec<String>,
    pub rows: Vec<RdRow>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RdTable {
    pub fn new(external_names: Vec<String>) -> Self {
        RdTable {
            external_names,
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        cols.extend(self.external_names.iter().cloned());
        cols.push("status".into());
        cols
    }

    /// Mean over the successful data rows of one group. QP is kept only when
    /// every row in the group shares it (fixed-parameter sweeps).
    pub fn mean_row(&self, codec: &str, target_bpp: Option<f64>, group: &[&RdRow]) -> RdRow {
        let ok: Vec<&&RdRow> = group.iter().filter(|r| r.is_ok()).collect();
        let status = if ok.len() == group.len() {
            STATUS_OK.to_string()
        } else {
            format!("partial {}/{}", ok.len(), group.len())
        };
        RdRow {
            image_id: MEAN_ID.into(),
            codec: codec.into(),
            target_bpp,
            achieved_bpp: mean(ok.iter().map(|r| r.achieved_bpp)),
            qp: group
                .first()
                .and_then(|r| r.qp)
                .filter(|q| group.iter().all(|r| r.qp == Some(*q))),
            psnr: mean(ok.iter().map(|r| r.psnr)),
            ssim: mean(ok.iter().map(|r| r.ssim)),
            mse: mean(ok.iter().map(|r| r.mse)),
            external: (0..self.external_names.len())
                .map(|i| mean(ok.iter().map(|r| r.external[i])))
                .collect(),
            status,
        }
    }

    /// Append data rows of one group followed by their mean.
    pub fn push_group(&mut self, codec: &str, target_bpp: Option<f64>, rows: Vec<RdRow>) {
        let m = self.mean_row(codec, target_bpp, &rows.iter().collect::<Vec<_>>());
        self.rows.extend(rows);
        self.rows.push(m);
    }

    pub fn data_rows(&self) -> impl Iterator<Item = &RdRow> {
        self.rows.iter().filter(|r| !r.is_mean())
    }

    pub fn mean_rows(&self) -> impl Iterator<Item = &RdRow> {
        self.rows.iter().filter(|r| r.is_mean())
    }

    pub fn failures(&self) -> usize {
        self.data_rows().filter(|r| !r.is_ok()).count()
    }

    /// Look up a metric by column name; `bpp` aliases `achieved_bpp`.
    pub fn value(&self, row: &RdRow, metric: &str) -> Result<Option<f64>, ReportError> {
        Ok(match metric {
            "psnr" => row.psnr,
            "ssim" => row.ssim,
            "mse" => row.mse,
            "bpp" | "achieved_bpp" => row.achieved_bpp,
            other => {
                let i = self
                    .external_names
                    .iter()
                    .position(|n| n == other)
                    .ok_or_else(|| ReportError::UnknownMetric(other.to_string()))?;
                row.external[i]
            }
        })
    }

    /// (achieved bpp, metric) pairs of the MEAN rows for one codec, in file
    /// order. Groups without a value are skipped.
    pub fn mean_curve(&self, codec: Option<&str>, metric: &str) -> Result<Vec<(f64, f64)>, ReportError> {
        let mut out = Vec::new();
        for r in self.mean_rows().filter(|r| codec.is_none_or(|c| r.codec == c)) {
            if let (Some(b), Some(q)) = (r.achieved_bpp, self.value(r, metric)?) {
                out.push((b, q));
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns())?;
        for r in &self.rows {
            let mut rec = vec![
                r.image_id.clone(),
                r.codec.clone(),
                fmt_opt(r.target_bpp),
                fmt_opt(r.achieved_bpp),
                fmt_opt(r.qp),
                fmt_opt(r.psnr),
                fmt_opt(r.ssim),
                fmt_opt(r.mse),
            ];
            rec.extend(r.external.iter().map(|v| fmt_opt(*v)));
            rec.push(r.status.clone());
            w.write_record(rec)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
            .expect("csv writer emits utf-8");
        Ok(format!("{RD_SCHEMA}\n{body}"))
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let body = text.strip_prefix(RD_SCHEMA).ok_or(ReportError::Schema)?;
        let body = body
            .strip_prefix("\r\n")
            .or_else(|| body.strip_prefix('\n'))
            .ok_or(ReportError::Schema)?;
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let n = header.len();
        if n < FIXED_COLUMNS.len() + 1
            || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS
            || header[n - 1] != "status"
        {
            return Err(ReportError::Columns(header.join(",")));
        }
        let mut table = RdTable::new(header[FIXED_COLUMNS.len()..n - 1].to_vec());
        for rec in rd.records() {
            let rec = rec?;
            // header comment and column row precede the first record
            let line = rec.position().map_or(0, |p| p.line()) + 1;
            let bad = |i: usize| ReportError::BadField {
                line,
                column: header[i].clone(),
                value: rec[i].to_string(),
            };
            let opt_f = |i: usize| -> Result<Option<f64>, ReportError> {
                if rec[i].is_empty() {
                    Ok(None)
                } else {
                    rec[i].parse().map(Some).map_err(|_| bad(i))
                }
            };
            table.rows.push(RdRow {
                image_id: rec[0].to_string(),
                codec: rec[1].to_string(),
                target_bpp: opt_f(2)?,
                achieved_bpp: opt_f(3)?,
                qp: if rec[4].is_empty() {
                    None
                } else {
                    Some(rec[4].parse().map_err(|_| bad(4))?)
                },
                psnr: opt_f(5)?,
                ssim: opt_f(6)?,
                mse: opt_f(7)?,
                external: (FIXED_COLUMNS.len()..n - 1).map(opt_f).collect::<Result<_, _>>()?,
                status: rec[n - 1].to_string(),
            });
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, bpp: f64, psnr: f64, ext: f64) -> RdRow {
        RdRow {
            image_id: id.into(),
            codec: "refcodec".into(),
            target_bpp: Some(0.3),
            achieved_bpp: Some(bpp),
            qp: Some(40),
            psnr: Some(psnr),
            ssim: Some(0.9),
            mse: Some(1e-3),
            external: vec![Some(ext)],
            status: STATUS_OK.into(),
        }
    }

    fn table() -> RdTable {
        let mut t = RdTable::new(vec!["lpips".into()]);
        let failed = RdRow::failed("c, quoted", "refcodec", Some(0.3), 1, "encoder\nexploded");
        t.push_group("refcodec", Some(0.3), vec![row("a", 0.29, 30.0, 0.2), row("b", 0.31, 32.5, 0.4), failed]);
        t
    }

    #[test]
    fn round_trip_is_exact() {
        let t = table();
        let text = t.to_csv().unwrap();
        assert!(text.starts_with(RD_SCHEMA));
        assert_eq!(text.lines().nth(1).unwrap(), "image_id,codec,target_bpp,achieved_bpp,qp,psnr,ssim,mse,lpips,status");
        let back = RdTable::from_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv().unwrap(), text);
    }

    #[test]
    fn mean_row_skips_failures() {
        let t = table();
        let m = t.mean_rows().next().unwrap();
        assert_eq!(m.psnr, Some(31.25));
        assert_eq!(m.external[0], Some(0.30000000000000004));
        assert_eq!(m.qp, None, "one row failed, so qp is not shared");
        assert_eq!(m.status, "partial 2/3");
        assert_eq!(t.failures(), 1);
        assert_eq!(t.mean_curve(Some("refcodec"), "lpips").unwrap(), vec![(0.3, 0.30000000000000004)]);
        assert!(matches!(t.mean_curve(None, "fid"), Err(ReportError::UnknownMetric(_))));
    }

    #[test]
    fn schema_and_fields_are_checked() {
        assert!(matches!(RdTable::from_csv("image_id\n"), Err(ReportError::Schema)));
        let text = format!("{RD_SCHEMA}\nimage_id,codec\n");
        assert!(matches!(RdTable::from_csv(&text), Err(ReportError::Columns(_))));
        let text = table().to_csv().unwrap().replace("32.5", "abc");
        let e = RdTable::from_csv(&text).unwrap_err();
        assert_eq!(e.to_string(), "line 4: bad psnr value \"abc\"");
    }

    #[test]
    fn infinite_psnr_survives() {
        let mut t = RdTable::new(vec![]);
        let mut r = row("a", 0.3, 0.0, 0.0);
        r.psnr = Some(f64::INFINITY);
        r.external.clear();
        t.push_group("refcodec", None, vec![r]);
        assert_eq!(RdTable::from_csv(&t.to_csv().unwrap()).unwrap(), t);
    }
}
