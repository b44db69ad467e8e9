//! CSV dumps of the learned graphs and of per-sample attention maps.
//!
//! Values are written with 17 significant digits so every `f64` reads back
//! exactly. Matrices have no header row; vectors are a single row.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::skeleton::{Dataset, StreamKind};
use crate::tensor::Tensor;
use crate::train::prepare_eval_sample;

pub const GATE_FILE: &str = "gate.csv";

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_text(header: Option<&[&str]>, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h).expect("in-memory write");
    }
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

fn csv_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> String {
    csv_text(None, rows.map(|r| r.iter().map(|&v| format_value(v)).collect()))
}

fn write(dir: &Path, name: String, text: String, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Parses a headerless numeric CSV back into rows.
pub fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        })?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        let row = record
            .iter()
            .map(|c| {
                c.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("{}: `{c}`: {e}", path.display()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `adjacency_k{k}_layer{l}.csv` (`Ā_k + B_k`, N×N) for every block
/// and subset, plus `gate.csv` listing each block's α.
pub fn export_graphs(model: &Model, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = model.topology.num_joints;
    let mut written = Vec::new();
    let mut gates = Vec::new();
    for (l, block) in model.blocks.iter().enumerate() {
        for (k, fixed) in model.adjacency.normalized.iter().enumerate() {
            let g = block.agcl.global_graph(&model.store, fixed, k);
            write(dir, format!("adjacency_k{k}_layer{l}.csv"), csv_rows(g.data().chunks(n)), &mut written)?;
        }
        let alpha = model.store.get(block.agcl.gate).value.data()[0];
        gates.push(vec![l.to_string(), format_value(alpha)]);
    }
    write(dir, GATE_FILE.into(), csv_text(Some(&["layer", "alpha"]), gates.into_iter()), &mut written)?;
    Ok(written)
}

/// Replaces characters that do not belong in a file name.
fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn rows_of(t: &Tensor, batch_index: usize) -> (Vec<f64>, usize) {
    let shape = t.shape();
    let per = shape[1..].iter().product::<usize>();
    let width = *shape.last().expect("attention maps have a batch axis");
    let slice = t.data()[batch_index * per..(batch_index + 1) * per].to_vec();
    (slice, width)
}

/// Runs one eval-mode pass on sample `sample_id` and writes, per block,
/// `sam_layer{l}_sample{id}.csv` (N values), `tam_kernels_layer{l}_sample{id}.csv`
/// (C×K) and `cam_layer{l}_sample{id}.csv` (C values).
pub fn export_attention(
    model: &Model,
    ds: &Dataset,
    stream: StreamKind,
    sample_id: &str,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let seq = ds
        .find(sample_id)
        .ok_or_else(|| Error::Argument(format!("no sample with id `{sample_id}`")))?;
    crate::train::check_compatible(model, ds, stream)?;
    let prepared = prepare_eval_sample(seq, &ds.topology, stream, model.config.window)?;
    let probes = model.attention(&Model::stack(&[&prepared])?)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = file_safe(sample_id);
    let mut written = Vec::new();
    for (l, p) in probes.iter().enumerate() {
        for (name, t) in [("sam", &p.sam), ("tam_kernels", &p.tam_kernels), ("cam", &p.cam)] {
            let (data, width) = rows_of(t, 0);
            write(dir, format!("{name}_layer{l}_sample{id}.csv"), csv_rows(data.chunks(width)), &mut written)?;
        }
    }
    Ok(written)
}
