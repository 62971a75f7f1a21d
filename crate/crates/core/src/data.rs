//! CSV data files shared by the command-line front end and the tests.
//!
//! Three formats, all with headers:
//!
//! - macro series: `t,x1,...,xn` with `t` contiguous from 1;
//! - micro cross sections: `t,i,<y columns>`, plus trailing
//!   `t_prev,<y column>_prev,...` columns when the records carry a
//!   previous-period observation (two-period panels);
//! - posterior chains: `iter,<parameter names>,logpost,accepted,stepsize`
//!   with `accepted` as 0/1.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit (including
//! infinities in chain log posteriors).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::mcmc::PosteriorChain;
use crate::microdens::{MicroBlock, MicroDataset, MicroRecord};

fn open_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file)))
}

fn open_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path)?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(file)))
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        crate::Error::Validation(format!("row {line}: {what} {field:?} is not a number"))
    })
}

fn parse_usize(field: &str, what: &str, line: usize) -> Result<usize> {
    field.trim().parse::<usize>().map_err(|_| {
        crate::Error::Validation(format!(
            "row {line}: {what} {field:?} is not a nonnegative integer"
        ))
    })
}

/// Writes a macro series with header `t,x1,...,xn`, `t = 1..=T`.
pub fn write_macro_csv(path: impl AsRef<Path>, x: &[DVector<f64>]) -> Result<()> {
    if x.is_empty() {
        return invalid("macro series must have at least one period");
    }
    let n = x[0].len();
    if n == 0 || x.iter().any(|row| row.len() != n) {
        return invalid("macro observations must share one positive length");
    }
    let mut w = open_writer(path.as_ref())?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_io)?;
    for (t, row) in x.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a macro series; validates the header shape, contiguous periods,
/// and finite values.
pub fn read_macro_csv(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let mut r = open_reader(path.as_ref())?;
    let header = r.headers().map_err(csv_io)?.clone();
    if header.len() < 2 || header.get(0).map(str::trim) != Some("t") {
        return invalid("macro header must be t,x1,...,xn");
    }
    let n = header.len() - 1;
    let mut out = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_io)?;
        let line = idx + 2;
        if rec.len() != n + 1 {
            return invalid(format!(
                "row {line}: expected {} fields, got {}",
                n + 1,
                rec.len()
            ));
        }
        let t = parse_usize(&rec[0], "period", line)?;
        if t != idx + 1 {
            return invalid(format!("row {line}: period {t} breaks the 1..=T sequence"));
        }
        let mut row = DVector::zeros(n);
        for j in 0..n {
            let v = parse_f64(&rec[j + 1], "observation", line)?;
            if !v.is_finite() {
                return invalid(format!("row {line}: observation {v} is not finite"));
            }
            row[j] = v;
        }
        out.push(row);
    }
    if out.is_empty() {
        return invalid("macro series has a header but no rows");
    }
    Ok(out)
}

/// Writes repeated cross sections with header `t,i,<names...>`. When any
/// record carries a previous-period observation, every record must, and
/// the header gains `t_prev,<name>_prev,...` columns.
pub fn write_micro_csv(path: impl AsRef<Path>, data: &MicroDataset, names: &[&str]) -> Result<()> {
    if names.len() != data.y_len() {
        return invalid(format!(
            "{} column names for observations of length {}",
            names.len(),
            data.y_len()
        ));
    }
    let mut any_prev = false;
    let mut all_prev = true;
    for block in data.blocks() {
        for rec in &block.records {
            match &rec.prev {
                Some((_, y)) if y.len() == data.y_len() => any_prev = true,
                Some(_) => return invalid("previous-period observation length differs"),
                None => all_prev = false,
            }
        }
    }
    if any_prev && !all_prev {
        return invalid("panel files need a previous-period observation on every record");
    }
    let mut w = open_writer(path.as_ref())?;
    let mut header: Vec<String> = vec!["t".into(), "i".into()];
    header.extend(names.iter().map(|s| s.to_string()));
    if any_prev {
        header.push("t_prev".into());
        header.extend(names.iter().map(|s| format!("{s}_prev")));
    }
    w.write_record(&header).map_err(csv_io)?;
    for block in data.blocks() {
        for rec in &block.records {
            let mut fields = vec![block.t.to_string(), rec.id.to_string()];
            fields.extend(rec.y.iter().map(|v| v.to_string()));
            if let Some((t_prev, y_prev)) = &rec.prev {
                fields.push(t_prev.to_string());
                fields.extend(y_prev.iter().map(|v| v.to_string()));
            }
            w.write_record(&fields).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads repeated cross sections; returns the dataset and the observation
/// column names.
pub fn read_micro_csv(path: impl AsRef<Path>) -> Result<(MicroDataset, Vec<String>)> {
    let mut r = open_reader(path.as_ref())?;
    let header = r.headers().map_err(csv_io)?.clone();
    let cols: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "i" {
        return invalid("micro header must be t,i,<observation columns>");
    }
    let prev_at = cols.iter().position(|c| c == "t_prev");
    let names: Vec<String> = cols[2..prev_at.unwrap_or(cols.len())].to_vec();
    if names.is_empty() {
        return invalid("micro file has no observation columns");
    }
    if let Some(p) = prev_at {
        let expected: Vec<String> = names.iter().map(|n| format!("{n}_prev")).collect();
        if cols[p + 1..] != expected[..] {
            return invalid(format!(
                "panel columns after t_prev must be {}",
                expected.join(",")
            ));
        }
    }
    let ncol = cols.len();
    let ny = names.len();

    let mut blocks: Vec<MicroBlock> = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_io)?;
        let line = idx + 2;
        if rec.len() != ncol {
            return invalid(format!(
                "row {line}: expected {ncol} fields, got {}",
                rec.len()
            ));
        }
        let t = parse_usize(&rec[0], "period", line)?;
        let id = rec[1].trim().parse::<u64>().map_err(|_| {
            crate::Error::Validation(format!(
                "row {line}: unit id {:?} is not an integer",
                &rec[1]
            ))
        })?;
        let mut y = Vec::with_capacity(ny);
        for j in 0..ny {
            y.push(parse_f64(&rec[2 + j], "observation", line)?);
        }
        let mut record = MicroRecord::new(id, y);
        if prev_at.is_some() {
            let t_prev = parse_usize(&rec[2 + ny], "previous period", line)?;
            let mut y_prev = Vec::with_capacity(ny);
            for j in 0..ny {
                y_prev.push(parse_f64(&rec[3 + ny + j], "previous observation", line)?);
            }
            record.prev = Some((t_prev, y_prev));
        }
        match blocks.last_mut() {
            Some(block) if block.t == t => block.records.push(record),
            _ => blocks.push(MicroBlock {
                t,
                records: vec![record],
            }),
        }
    }
    let data = MicroDataset::new(blocks)?;
    Ok((data, names))
}

/// Writes a posterior chain with header
/// `iter,<names...>,logpost,accepted,stepsize`. All rows are written,
/// burn-in included; the burn-in split is the reader's input.
pub fn write_chain_csv(
    path: impl AsRef<Path>,
    chain: &PosteriorChain,
    names: &[String],
) -> Result<()> {
    if names.len() != chain.dim() {
        return invalid(format!(
            "{} parameter names for a {}-dimensional chain",
            names.len(),
            chain.dim()
        ));
    }
    let mut w = open_writer(path.as_ref())?;
    let mut header: Vec<String> = vec!["iter".into()];
    header.extend(names.iter().cloned());
    header.extend(["logpost".into(), "accepted".into(), "stepsize".into()]);
    w.write_record(&header).map_err(csv_io)?;
    for k in 0..chain.len() {
        let mut fields = vec![(k + 1).to_string()];
        fields.extend(chain.draws.row(k).iter().map(|v| v.to_string()));
        fields.push(chain.logpost[k].to_string());
        fields.push(if chain.accepted[k] { "1" } else { "0" }.to_string());
        fields.push(chain.stepsizes[k].to_string());
        w.write_record(&fields).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a posterior chain written by [`write_chain_csv`]; returns the
/// chain (with the given burn-in split and no covariance snapshots) and
/// the parameter names.
pub fn read_chain_csv(
    path: impl AsRef<Path>,
    burn_in: usize,
) -> Result<(PosteriorChain, Vec<String>)> {
    let mut r = open_reader(path.as_ref())?;
    let header = r.headers().map_err(csv_io)?.clone();
    let cols: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if cols.len() < 4
        || cols[0] != "iter"
        || cols[cols.len() - 3..] != ["logpost", "accepted", "stepsize"]
    {
        return invalid("chain header must be iter,<names...>,logpost,accepted,stepsize");
    }
    let names: Vec<String> = cols[1..cols.len() - 3].to_vec();
    if names.is_empty() {
        return invalid("chain file has no parameter columns");
    }
    let dim = names.len();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut logpost = Vec::new();
    let mut accepted = Vec::new();
    let mut stepsizes = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_io)?;
        let line = idx + 2;
        if rec.len() != dim + 4 {
            return invalid(format!(
                "row {line}: expected {} fields, got {}",
                dim + 4,
                rec.len()
            ));
        }
        let iter = parse_usize(&rec[0], "iteration", line)?;
        if iter != idx + 1 {
            return invalid(format!(
                "row {line}: iteration {iter} breaks the 1..=n sequence"
            ));
        }
        let mut row = Vec::with_capacity(dim);
        for j in 0..dim {
            row.push(parse_f64(&rec[1 + j], "draw", line)?);
        }
        rows.push(row);
        logpost.push(parse_f64(&rec[1 + dim], "log posterior", line)?);
        accepted.push(match rec[2 + dim].trim() {
            "0" => false,
            "1" => true,
            other => {
                return invalid(format!(
                    "row {line}: accepted flag {other:?} must be 0 or 1"
                ))
            }
        });
        stepsizes.push(parse_f64(&rec[3 + dim], "step size", line)?);
    }
    if rows.is_empty() {
        return invalid("chain file has a header but no draws");
    }
    if burn_in >= rows.len() {
        return invalid(format!(
            "burn-in {burn_in} leaves no draws out of {}",
            rows.len()
        ));
    }
    let draws = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    Ok((
        PosteriorChain {
            draws,
            logpost,
            accepted,
            stepsizes,
            cov_trace: Vec::new(),
            burn_in,
        },
        names,
    ))
}

fn csv_io(err: csv::Error) -> crate::Error {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => crate::Error::Io(io),
            _ => unreachable!("is_io_error guarantees an Io kind"),
        }
    } else {
        crate::Error::Validation(format!("csv error: {err}"))
    }
}
