//! Loss-curve CSVs and text checkpoints.
//!
//! Raw run CSV: header `iteration,loss`. Aggregated CSV: header
//! `iteration,mean,lo,hi`. Floats use Rust's shortest round-trip formatting.
//!
//! Checkpoints are plain text:
//!
//! ```text
//! minigate-checkpoint v1
//! dims H=<hidden> D=<input> O=<output>
//! param wf_h <rows>x<cols>
//! wf_h[0] <17-significant-digit floats ...>
//! ...
//! ```
//!
//! with one `param` section per matrix in canonical order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mgu::{MguParams, Model, ReadoutParams, PARAM_NAMES};
use crate::tensor::Matrix;

use super::aggregate::AggregatedCurve;
use super::train::RunLog;

const CHECKPOINT_MAGIC: &str = "minigate-checkpoint v1";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

pub fn write_run_csv(log: &RunLog, path: &Path) -> Result<()> {
    write_trace_csv(&log.losses, path)
}

pub fn write_trace_csv(losses: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["iteration", "loss"])
        .map_err(|e| csv_error(path, e))?;
    for &(it, loss) in losses {
        w.write_record([it.to_string(), loss.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_curve_csv(curve: &AggregatedCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["iteration", "mean", "lo", "hi"])
        .map_err(|e| csv_error(path, e))?;
    for i in 0..curve.len() {
        w.write_record([
            curve.iterations[i].to_string(),
            curve.mean[i].to_string(),
            curve.lo[i].to_string(),
            curve.hi[i].to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let found = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |field: &str| Error::parse(path, line, format!("cannot parse `{field}`"));
        let iter = rec[0].trim().parse::<usize>().map_err(|_| bad(&rec[0]))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad(f)))
            .collect::<Result<Vec<_>>>()?;
        rows.push((iter, values));
    }
    Ok(rows)
}

pub fn read_run_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    Ok(read_rows(path, &["iteration", "loss"])?
        .into_iter()
        .map(|(i, v)| (i, v[0]))
        .collect())
}

pub fn read_curve_csv(path: &Path) -> Result<AggregatedCurve> {
    let rows = read_rows(path, &["iteration", "mean", "lo", "hi"])?;
    let mut curve = AggregatedCurve::default();
    for (i, v) in rows {
        curve.iterations.push(i);
        curve.mean.push(v[0]);
        curve.lo.push(v[1]);
        curve.hi.push(v[2]);
    }
    Ok(curve)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{CHECKPOINT_MAGIC}").map_err(io)?;
    writeln!(
        w,
        "dims H={} D={} O={}",
        model.hidden_size(),
        model.input_size(),
        model.output_size()
    )
    .map_err(io)?;
    for (name, m) in PARAM_NAMES.iter().zip(model.params()) {
        writeln!(w, "param {name} {}x{}", m.rows(), m.cols()).map_err(io)?;
        for r in 0..m.rows() {
            write!(w, "{name}[{r}]").map_err(io)?;
            for v in m.row(r) {
                write!(w, " {v:.16e}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

/// Loads a checkpoint and checks it has the requested dimensions.
pub fn load_checkpoint_expect(path: &Path, h: usize, d: usize, o: usize) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let found = (model.hidden_size(), model.input_size(), model.output_size());
    if found != (h, d, o) {
        return Err(Error::parse(
            path,
            2,
            format!(
                "checkpoint has H={} D={} O={}, expected H={h} D={d} O={o}",
                found.0, found.1, found.2
            ),
        ));
    }
    Ok(model)
}

fn parse_checkpoint(text: &str, path: &Path) -> Result<Model> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| {
            Error::parse(
                path,
                text.lines().count() + 1,
                format!("unexpected end of file, expected {what}"),
            )
        })
    };

    let (n, magic) = next("header")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(Error::parse(
            path,
            n,
            format!("expected `{CHECKPOINT_MAGIC}`"),
        ));
    }
    let (n, dims) = next("dims line")?;
    let dim = |key: &str| -> Result<usize> {
        dims.split_whitespace()
            .find_map(|tok| tok.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| {
                Error::parse(
                    path,
                    n,
                    format!("missing or invalid `{key}<n>` in dims line"),
                )
            })
    };
    if !dims.starts_with("dims ") {
        return Err(Error::parse(path, n, "expected `dims H=.. D=.. O=..`"));
    }
    let (h, d, o) = (dim("H=")?, dim("D=")?, dim("O=")?);
    let shapes = [
        (h, h),
        (h, d),
        (h, 1),
        (h, h),
        (h, d),
        (h, 1),
        (o, h),
        (o, 1),
    ];

    let mut mats = Vec::with_capacity(8);
    for (name, (rows, cols)) in PARAM_NAMES.iter().zip(shapes) {
        let (n, head) = next("param section")?;
        let want = format!("param {name} {rows}x{cols}");
        if head.trim() != want {
            return Err(Error::parse(
                path,
                n,
                format!("expected `{want}`, found `{}`", head.trim()),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (n, line) = next("matrix row")?;
            let mut toks = line.split_whitespace();
            let label = format!("{name}[{r}]");
            if toks.next() != Some(label.as_str()) {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected row label `{label}`"),
                ));
            }
            let start = data.len();
            for tok in toks {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::parse(path, n, format!("cannot parse `{tok}` as a number"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(path, n, format!("non-finite value `{tok}`")));
                }
                data.push(v);
            }
            if data.len() - start != cols {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected {cols} values, found {}", data.len() - start),
                ));
            }
        }
        mats.push(Matrix::from_vec(rows, cols, data)?);
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(path, n, format!("trailing content `{extra}`")));
    }

    let mut it = mats.into_iter();
    let mut take = || it.next().expect("eight matrices parsed");
    let model = Model {
        cell: MguParams {
            wf_h: take(),
            wf_x: take(),
            bf: take(),
            w_h: take(),
            w_x: take(),
            b: take(),
        },
        readout: ReadoutParams {
            v: take(),
            c: take(),
        },
    };
    model.validate()?;
    Ok(model)
}
