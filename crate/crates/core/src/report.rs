//! Tabular exports: training histories, plot data and sweep
//! tables. Everything here is a pure transformation of already computed
//! results, so re-rendering a stored history gives byte-identical files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LayerReport;
use crate::persistence::{format_f64, parse_f64};
use crate::trainer::{HistoryRecord, SweepAggregate, SweepRow, TrainingHistory};

/// A training history as stored in CSV: the per-step records plus the two
/// closed-form baselines carried in a leading comment line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryTable {
    pub layers: usize,
    pub loss_dnc: f64,
    pub loss_srg: Option<f64>,
    pub records: Vec<HistoryRecord>,
}

impl HistoryTable {
    pub fn from_history(history: &TrainingHistory) -> Self {
        Self {
            layers: history.config.spec.layers,
            loss_dnc: history.loss_dnc,
            loss_srg: history.loss_srg,
            records: history.records.clone(),
        }
    }
}

/// Final singular values of one layer's class means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer: usize,
    pub hard_rank: usize,
    pub singular_values: Vec<f64>,
}

pub fn spectra_snapshot(reports: &[LayerReport]) -> Vec<LayerSpectrum> {
    reports
        .iter()
        .map(|r| LayerSpectrum {
            layer: r.layer,
            hard_rank: r.spectral.hard_rank,
            singular_values: r.spectral.singular_values.clone(),
        })
        .collect()
}

fn history_header(layers: usize) -> String {
    let mut cols = vec!["step".to_string(), "total".into(), "fit".into(), "reg".into()];
    cols.extend((1..=layers).map(|l| format!("dnc1_layer_{l}")));
    cols.extend((1..=layers).map(|l| format!("rank_layer_{l}")));
    cols.join(",")
}

/// `step,total,fit,reg,dnc1_layer_1..L,rank_layer_1..L`, preceded by
/// `# loss_dnc=…,loss_srg=…`.
pub fn history_to_csv(table: &HistoryTable) -> String {
    let mut out = format!(
        "# loss_dnc={},loss_srg={}\n{}\n",
        format_f64(table.loss_dnc),
        table.loss_srg.map(format_f64).unwrap_or_default(),
        history_header(table.layers)
    );
    for r in &table.records {
        let mut cells = vec![r.step.to_string(), format_f64(r.total), format_f64(r.fit), format_f64(r.reg)];
        cells.extend(r.dnc1.iter().map(|&x| format_f64(x)));
        cells.extend(r.ranks.iter().map(|x| x.to_string()));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn corrupt(line: usize, what: impl std::fmt::Display) -> Error {
    Error::input(format!("history CSV line {line}: {what}"))
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.trim().parse().map_err(|_| corrupt(line, format!("expected an integer, got {s:?}")))
}

/// Inverse of [`history_to_csv`]. The gradient norm is not part of the
/// table and comes back as NaN.
pub fn parse_history_csv(text: &str) -> Result<HistoryTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, meta) = lines.next().ok_or_else(|| corrupt(1, "empty input"))?;
    let meta = meta.strip_prefix("# ").ok_or_else(|| corrupt(1, "missing baseline comment"))?;
    let mut loss_dnc = None;
    let mut loss_srg = None;
    for field in meta.split(',') {
        match field.split_once('=') {
            Some(("loss_dnc", v)) => loss_dnc = Some(parse_f64(v)?),
            Some(("loss_srg", v)) => loss_srg = if v.is_empty() { None } else { Some(parse_f64(v)?) },
            _ => return Err(corrupt(1, format!("unknown field {field:?}"))),
        }
    }
    let loss_dnc = loss_dnc.ok_or_else(|| corrupt(1, "missing loss_dnc"))?;

    let (_, header) = lines.next().ok_or_else(|| corrupt(2, "missing header"))?;
    let width = header.split(',').count();
    if width < 6 || (width - 4) % 2 != 0 {
        return Err(corrupt(2, "header has the wrong number of columns"));
    }
    let layers = (width - 4) / 2;
    if header != history_header(layers) {
        return Err(corrupt(2, "unexpected column names"));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(corrupt(i + 1, format!("expected {width} cells, got {}", cells.len())));
        }
        records.push(HistoryRecord {
            step: parse_usize(cells[0], i + 1)?,
            total: parse_f64(cells[1])?,
            fit: parse_f64(cells[2])?,
            reg: parse_f64(cells[3])?,
            grad_norm: f64::NAN,
            dnc1: cells[4..4 + layers].iter().map(|c| parse_f64(c)).collect::<Result<_>>()?,
            ranks: cells[4 + layers..].iter().map(|c| parse_usize(c, i + 1)).collect::<Result<_>>()?,
        });
    }
    Ok(HistoryTable { layers, loss_dnc, loss_srg, records })
}

/// Plot tables: loss against the baselines, DNC1 per layer and the final
/// singular values.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    /// `step,total,loss_dnc,loss_srg`
    pub loss: String,
    /// `step,layer_1..L`
    pub dnc1: String,
    /// `layer,index,singular_value`; absent without a spectra snapshot.
    pub singular_values: Option<String>,
}

impl PlotData {
    /// `(file name, contents)` pairs in a fixed order.
    pub fn files(&self) -> Vec<(&'static str, &str)> {
        let mut out = vec![("loss.csv", self.loss.as_str()), ("dnc1.csv", self.dnc1.as_str())];
        if let Some(s) = &self.singular_values {
            out.push(("singular_values.csv", s.as_str()));
        }
        out
    }
}

pub fn plot_data(table: &HistoryTable, spectra: Option<&[LayerSpectrum]>) -> PlotData {
    let srg = table.loss_srg.map(format_f64).unwrap_or_default();
    let dnc = format_f64(table.loss_dnc);
    let mut loss = String::from("step,total,loss_dnc,loss_srg\n");
    let mut dnc1 = String::from("step");
    for l in 1..=table.layers {
        dnc1.push_str(&format!(",layer_{l}"));
    }
    dnc1.push('\n');
    for r in &table.records {
        loss.push_str(&format!("{},{},{dnc},{srg}\n", r.step, format_f64(r.total)));
        let cells: Vec<String> = r.dnc1.iter().map(|&x| format_f64(x)).collect();
        dnc1.push_str(&format!("{},{}\n", r.step, cells.join(",")));
    }
    let singular_values = spectra.map(|layers| {
        let mut s = String::from("layer,index,singular_value\n");
        for ls in layers {
            for (i, &v) in ls.singular_values.iter().enumerate() {
                s.push_str(&format!("{},{},{}\n", ls.layer, i + 1, format_f64(v)));
            }
        }
        s
    });
    PlotData { loss, dnc1, singular_values }
}

fn check_label(label: &str) -> Result<()> {
    if label.contains([',', '\n', '\r']) {
        return Err(Error::input(format!("sweep label {label:?} may not contain commas or newlines")));
    }
    Ok(())
}

/// One row per run. Runtime is deliberately left out so that identical
/// sweeps produce identical files; see [`sweep_timing_csv`].
pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<String> {
    let layers = rows.iter().map(|r| r.ranks.len()).max().unwrap_or(0);
    let mut out = String::from("run,point,label,repeat,seed,final_loss");
    for l in 1..=layers {
        out.push_str(&format!(",rank_layer_{l}"));
    }
    out.push_str(",mean_intermediate_rank,dnc_detected,diverged\n");
    for r in rows {
        check_label(&r.label)?;
        let mut cells = vec![
            r.run.to_string(),
            r.point.to_string(),
            r.label.clone(),
            r.repeat.to_string(),
            r.seed.to_string(),
            format_f64(r.final_loss),
        ];
        cells.extend((0..layers).map(|i| r.ranks.get(i).map(|x| x.to_string()).unwrap_or_default()));
        cells.push(format_f64(r.mean_intermediate_rank));
        cells.push(r.dnc_detected.to_string());
        cells.push(r.diverged.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// `run,runtime_secs`.
pub fn sweep_timing_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("run,runtime_secs\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.run, format_f64(r.runtime_secs)));
    }
    out
}

fn parse_bool(s: &str, line: usize) -> Result<bool> {
    s.parse().map_err(|_| corrupt(line, format!("expected true/false, got {s:?}")))
}

/// Inverse of [`sweep_to_csv`]; runtimes come back as zero.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| corrupt(1, "empty input"))?;
    let width = header.split(',').count();
    if width < 9 || !header.starts_with("run,point,label,repeat,seed,final_loss") {
        return Err(corrupt(1, "not a sweep table"));
    }
    let layers = width - 9;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != width {
            return Err(corrupt(i + 1, format!("expected {width} cells, got {}", c.len())));
        }
        let ranks = c[6..6 + layers]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| parse_usize(s, i + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SweepRow {
            run: parse_usize(c[0], i + 1)?,
            point: parse_usize(c[1], i + 1)?,
            label: c[2].to_string(),
            repeat: parse_usize(c[3], i + 1)?,
            seed: c[4].parse().map_err(|_| corrupt(i + 1, "bad seed"))?,
            final_loss: parse_f64(c[5])?,
            ranks,
            mean_intermediate_rank: parse_f64(c[6 + layers])?,
            dnc_detected: parse_bool(c[7 + layers], i + 1)?,
            diverged: parse_bool(c[8 + layers], i + 1)?,
            runtime_secs: 0.0,
        });
    }
    Ok(rows)
}

pub fn aggregates_to_csv(aggs: &[SweepAggregate]) -> Result<String> {
    let mut out =
        String::from("point,label,runs,diverged,mean_loss,std_loss,mean_rank,std_rank,dnc_probability\n");
    for a in aggs {
        check_label(&a.label)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            a.point,
            a.label,
            a.runs,
            a.diverged,
            format_f64(a.mean_loss),
            format_f64(a.std_loss),
            format_f64(a.mean_rank),
            format_f64(a.std_rank),
            format_f64(a.dnc_probability)
        ));
    }
    Ok(out)
}

/// Short human-readable summary of a finished run.
pub fn summary(table: &HistoryTable) -> String {
    let Some(last) = table.records.last() else {
        return "empty history\n".to_string();
    };
    let mut s = format!("steps: {}\nfinal loss: {:.6e}\nDNC baseline: {:.6e}\n", last.step, last.total, table.loss_dnc);
    if let Some(srg) = table.loss_srg {
        s.push_str(&format!("SRG baseline: {srg:.6e}\n"));
    }
    s.push_str(&format!("beats DNC: {}\n", last.total < table.loss_dnc));
    let ranks: Vec<String> = last.ranks.iter().map(|r| r.to_string()).collect();
    s.push_str(&format!("ranks (layers 1..L): {}\n", ranks.join(" ")));
    let dnc1: Vec<String> = last.dnc1.iter().map(|x| format!("{x:.3e}")).collect();
    s.push_str(&format!("DNC1 (layers 1..L): {}\n", dnc1.join(" ")));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> HistoryTable {
        HistoryTable {
            layers: 3,
            loss_dnc: 0.25,
            loss_srg: Some(0.2),
            records: vec![
                HistoryRecord {
                    step: 0,
                    total: 0.5,
                    fit: 0.49,
                    reg: 0.01,
                    grad_norm: 1.0,
                    dnc1: vec![0.1, f64::NAN, 1e-300],
                    ranks: vec![4, 3, 3],
                },
                HistoryRecord {
                    step: 10,
                    total: 0.1 + 0.2,
                    fit: 0.2,
                    reg: 0.1,
                    grad_norm: 0.5,
                    dnc1: vec![0.0, 1.0 / 3.0, 2.0],
                    ranks: vec![4, 2, 3],
                },
            ],
        }
    }

    #[test]
    fn history_round_trip() {
        let t = table();
        let csv = history_to_csv(&t);
        assert!(csv.lines().nth(1).unwrap().starts_with("step,total,fit,reg,dnc1_layer_1"));
        let back = parse_history_csv(&csv).unwrap();
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.records[1].total, 0.1 + 0.2);
        assert!(back.records[0].dnc1[1].is_nan());
        assert_eq!(back.records[0].dnc1[2], 1e-300);
        assert_eq!(history_to_csv(&back), csv);
    }

    #[test]
    fn history_without_srg_baseline() {
        let t = HistoryTable { loss_srg: None, ..table() };
        assert_eq!(parse_history_csv(&history_to_csv(&t)).unwrap().loss_srg, None);
    }

    #[test]
    fn malformed_history_is_rejected() {
        let csv = history_to_csv(&table());
        assert!(parse_history_csv("").is_err());
        assert!(parse_history_csv(&csv.replace("# ", "")).is_err());
        let short: String = csv.lines().take(3).collect::<Vec<_>>().join("\n") + "\n1,2\n";
        assert!(parse_history_csv(&short).is_err());
    }

    #[test]
    fn plot_data_shapes() {
        let spectra = vec![LayerSpectrum { layer: 1, hard_rank: 2, singular_values: vec![2.0, 1.0] }];
        let p = plot_data(&table(), Some(&spectra));
        assert_eq!(p.loss.lines().count(), 3);
        assert_eq!(p.dnc1.lines().next().unwrap(), "step,layer_1,layer_2,layer_3");
        assert_eq!(p.singular_values.as_ref().unwrap().lines().count(), 3);
        assert_eq!(p.files().len(), 3);
        assert!(plot_data(&table(), None).singular_values.is_none());
    }

    #[test]
    fn sweep_round_trip() {
        let row = SweepRow {
            run: 0,
            point: 0,
            label: "lambda=2^-4".into(),
            repeat: 0,
            seed: 42,
            final_loss: 0.125,
            ranks: vec![15, 6, 6, 9],
            mean_intermediate_rank: 6.0,
            dnc_detected: false,
            diverged: false,
            runtime_secs: 3.5,
        };
        let diverged = SweepRow { run: 1, ranks: vec![], diverged: true, final_loss: f64::INFINITY, ..row.clone() };
        let rows = vec![row, diverged];
        let csv = sweep_to_csv(&rows).unwrap();
        assert!(!csv.contains("3.5"));
        let back = parse_sweep_csv(&csv).unwrap();
        assert_eq!(back[0].ranks, rows[0].ranks);
        assert!(back[1].ranks.is_empty() && back[1].diverged);
        assert_eq!(sweep_to_csv(&back).unwrap(), csv);
        assert!(sweep_timing_csv(&rows).contains("3.5"));
    }

    #[test]
    fn labels_with_commas_are_refused() {
        let row = SweepRow {
            run: 0,
            point: 0,
            label: "a,b".into(),
            repeat: 0,
            seed: 0,
            final_loss: 0.0,
            ranks: vec![],
            mean_intermediate_rank: 0.0,
            dnc_detected: false,
            diverged: false,
            runtime_secs: 0.0,
        };
        assert!(sweep_to_csv(&[row]).is_err());
    }
}
