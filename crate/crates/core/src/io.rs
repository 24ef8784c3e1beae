//! Plain-text containers for tensors, models, network checkpoints and
//! latent series tables.
//!
//! Every container starts with a tag line, then a `dims` line, then named
//! blocks. A block header reads `block <name> <rows> <cols>` and is followed
//! by `rows` lines of space-separated values. Floats are written in Rust's
//! shortest round-trip form, so reading a file back reproduces every value
//! bit for bit and rewriting it reproduces the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lstm::LstmParams;
use crate::metrics::SeriesScore;
use crate::paratuck2::Paratuck2Model;
use crate::tensor::{Matrix, Tensor3};

pub const TENSOR_TAG: &str = "paratuck-lstm tensor";
pub const MODEL_TAG: &str = "paratuck-lstm paratuck2";
pub const LSTM_TAG: &str = "paratuck-lstm lstm";

/// Phase marker for the history columns of a series table.
pub const PHASE_HISTORY: &str = "history";
/// Phase marker for the forecast columns of a series table.
pub const PHASE_FORECAST: &str = "forecast";

fn push_block(out: &mut String, name: &str, rows: usize, cols: usize, values: &[f64]) {
    debug_assert_eq!(values.len(), rows * cols);
    writeln!(out, "block {name} {rows} {cols}").unwrap();
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| v.to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn push_matrix(out: &mut String, name: &str, m: &Matrix) {
    let owned = m.as_standard_layout();
    push_block(out, name, m.nrows(), m.ncols(), owned.as_slice().unwrap());
}

/// Line-oriented reader over one container.
struct Lines<'a> {
    what: &'static str,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(what: &'static str, text: &'a str) -> Self {
        Self {
            what,
            iter: text.lines().enumerate(),
        }
    }

    fn err(&self, line: usize, detail: impl std::fmt::Display) -> Error {
        Error::format(self.what, format!("line {}: {detail}", line + 1))
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.iter
            .next()
            .ok_or_else(|| Error::format(self.what, "unexpected end of file"))
    }

    fn expect_tag(&mut self, tag: &str) -> Result<()> {
        let (n, line) = self.next_line()?;
        if line.trim() != tag {
            return Err(self.err(n, format!("expected {tag:?}")));
        }
        Ok(())
    }

    /// Reads `<key> <usize>...` and returns the numbers.
    fn keyed_usizes(&mut self, key: &str, count: usize) -> Result<Vec<usize>> {
        let (n, line) = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(n, format!("expected {key:?}")));
        }
        let values: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|e| self.err(n, format!("{p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != count {
            return Err(self.err(n, format!("expected {count} values after {key:?}")));
        }
        Ok(values)
    }

    fn keyed_word(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next_line()?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => Ok((n, v)),
            _ => Err(self.err(n, format!("expected \"{key} <value>\""))),
        }
    }

    /// Reads a block with the given name and shape.
    fn block(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let (n, line) = self.next_line()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let header_ok = parts.len() == 4
            && parts[0] == "block"
            && parts[1] == name
            && parts[2].parse::<usize>().ok() == Some(rows)
            && parts[3].parse::<usize>().ok() == Some(cols);
        if !header_ok {
            return Err(self.err(
                n,
                format!("expected \"block {name} {rows} {cols}\", found {line:?}"),
            ));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.next_line()?;
            let before = values.len();
            for p in line.split_whitespace() {
                let v: f64 = p.parse().map_err(|e| self.err(n, format!("{p:?}: {e}")))?;
                values.push(v);
            }
            if values.len() - before != cols {
                return Err(self.err(
                    n,
                    format!("expected {cols} values, found {}", values.len() - before),
                ));
            }
        }
        Ok(Matrix::from_shape_vec((rows, cols), values).expect("counted above"))
    }

    fn finish(&mut self) -> Result<()> {
        for (n, line) in self.iter.by_ref() {
            if !line.trim().is_empty() {
                return Err(Error::format(
                    self.what,
                    format!("line {}: trailing content", n + 1),
                ));
            }
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Slices `X_k` as blocks `X0`, `X1`, ...
pub fn tensor_to_string(x: &Tensor3) -> String {
    let (i, j, k) = x.dims();
    let mut out = format!("{TENSOR_TAG}\ndims {i} {j} {k}\n");
    for kk in 0..k {
        push_matrix(&mut out, &format!("X{kk}"), &x.slice(kk).to_owned());
    }
    out
}

pub fn tensor_from_str(text: &str) -> Result<Tensor3> {
    let mut lines = Lines::new("tensor file", text);
    lines.expect_tag(TENSOR_TAG)?;
    let d = lines.keyed_usizes("dims", 3)?;
    let slices: Vec<Matrix> = (0..d[2])
        .map(|kk| lines.block(&format!("X{kk}"), d[0], d[1]))
        .collect::<Result<_>>()?;
    lines.finish()?;
    if slices.is_empty() {
        return Ok(Tensor3::zeros(d[0], d[1], 0));
    }
    Tensor3::from_slices(&slices)
}

pub fn write_tensor(path: &Path, x: &Tensor3) -> Result<()> {
    write_text(path, &tensor_to_string(x))
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    tensor_from_str(&read_text(path)?)
}

/// Blocks `A`, `H`, `B`, `DA` (row `k` is the diagonal of `D^A_k`) and `DB`.
/// The `nonnegative` line records whether every entry is `>= 0`.
pub fn model_to_string(m: &Paratuck2Model) -> String {
    let d = m.dims();
    let mut out = format!(
        "{MODEL_TAG}\ndims {} {} {} {} {}\nnonnegative {}\n",
        d.i,
        d.j,
        d.k,
        d.p,
        d.q,
        m.is_nonnegative()
    );
    push_matrix(&mut out, "A", &m.a);
    push_matrix(&mut out, "H", &m.h);
    push_matrix(&mut out, "B", &m.b);
    push_matrix(&mut out, "DA", &m.da);
    push_matrix(&mut out, "DB", &m.db);
    out
}

/// Parses a model and checks the recorded non-negativity flag against the
/// values.
pub fn model_from_str(text: &str) -> Result<Paratuck2Model> {
    let mut lines = Lines::new("model file", text);
    lines.expect_tag(MODEL_TAG)?;
    let d = lines.keyed_usizes("dims", 5)?;
    let (i, j, k, p, q) = (d[0], d[1], d[2], d[3], d[4]);
    let (n, flag) = lines.keyed_word("nonnegative")?;
    let flag: bool = flag
        .parse()
        .map_err(|_| lines.err(n, "nonnegative must be true or false"))?;
    let a = lines.block("A", i, p)?;
    let h = lines.block("H", p, q)?;
    let b = lines.block("B", j, q)?;
    let da = lines.block("DA", k, p)?;
    let db = lines.block("DB", k, q)?;
    lines.finish()?;
    let m = Paratuck2Model::new(a, h, b, da, db)?;
    if !m.is_finite() {
        return Err(Error::format("model file", "non-finite factor entry"));
    }
    if flag != m.is_nonnegative() {
        return Err(Error::format(
            "model file",
            format!("nonnegative flag is {flag} but the factors disagree"),
        ));
    }
    Ok(m)
}

pub fn write_model(path: &Path, m: &Paratuck2Model) -> Result<()> {
    write_text(path, &model_to_string(m))
}

pub fn read_model(path: &Path) -> Result<Paratuck2Model> {
    model_from_str(&read_text(path)?)
}

const GATE_LETTERS: [&str; 4] = ["i", "c", "f", "o"];

/// Blocks `W_g`, `U_g`, `b_g` for gates `i`, `c`, `f`, `o`, then `W_y`, `b_y`.
/// Bias vectors are stored as single-column blocks.
pub fn lstm_to_string(p: &LstmParams) -> String {
    let mut out = format!(
        "{LSTM_TAG}\ndims {} {} {}\n",
        p.input_dim, p.hidden_dim, p.output_dim
    );
    for (g, letter) in GATE_LETTERS.iter().enumerate() {
        push_matrix(&mut out, &format!("W_{letter}"), &p.w[g]);
        push_matrix(&mut out, &format!("U_{letter}"), &p.u[g]);
        push_block(
            &mut out,
            &format!("b_{letter}"),
            p.hidden_dim,
            1,
            p.b[g].as_slice().unwrap(),
        );
    }
    push_matrix(&mut out, "W_y", &p.wy);
    push_block(&mut out, "b_y", p.output_dim, 1, p.by.as_slice().unwrap());
    out
}

pub fn lstm_from_str(text: &str) -> Result<LstmParams> {
    let mut lines = Lines::new("LSTM checkpoint", text);
    lines.expect_tag(LSTM_TAG)?;
    let d = lines.keyed_usizes("dims", 3)?;
    let (n_in, n_hid, n_out) = (d[0], d[1], d[2]);
    let mut p = LstmParams::zeros(n_in, n_hid, n_out);
    for (g, letter) in GATE_LETTERS.iter().enumerate() {
        p.w[g] = lines.block(&format!("W_{letter}"), n_hid, n_in)?;
        p.u[g] = lines.block(&format!("U_{letter}"), n_hid, n_hid)?;
        p.b[g] = lines
            .block(&format!("b_{letter}"), n_hid, 1)?
            .column(0)
            .to_owned();
    }
    p.wy = lines.block("W_y", n_out, n_hid)?;
    p.by = lines.block("b_y", n_out, 1)?.column(0).to_owned();
    lines.finish()?;
    Ok(p)
}

pub fn write_lstm(path: &Path, p: &LstmParams) -> Result<()> {
    write_text(path, &lstm_to_string(p))
}

pub fn read_lstm(path: &Path) -> Result<LstmParams> {
    lstm_from_str(&read_text(path)?)
}

/// Series table: one row per time step with columns `step`, `phase`, then
/// one column per latent factor. Steps before `history` are marked
/// [`PHASE_HISTORY`], the rest [`PHASE_FORECAST`].
pub fn series_to_string(e: &Matrix, history: usize) -> String {
    let (l, t) = e.dim();
    let mut out = String::from("step,phase");
    for r in 0..l {
        write!(out, ",f{r}").unwrap();
    }
    out.push('\n');
    for c in 0..t {
        let phase = if c < history {
            PHASE_HISTORY
        } else {
            PHASE_FORECAST
        };
        write!(out, "{c},{phase}").unwrap();
        for r in 0..l {
            write!(out, ",{}", e[[r, c]]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a series table back into `(L x T matrix, history length)`.
pub fn series_from_str(text: &str) -> Result<(Matrix, usize)> {
    let bad = |detail: String| Error::format("series table", detail);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "step" || &headers[1] != "phase" {
        return Err(bad("header must start with step,phase".into()));
    }
    let l = headers.len() - 2;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut history = 0;
    let mut seen_forecast = false;
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let step: usize = rec[0]
            .parse()
            .map_err(|_| bad(format!("row {}: bad step {:?}", n + 1, &rec[0])))?;
        if step != n {
            return Err(bad(format!("row {}: steps must count up from 0", n + 1)));
        }
        match &rec[1] {
            PHASE_HISTORY if !seen_forecast => history += 1,
            PHASE_HISTORY => return Err(bad(format!("row {}: history after forecast", n + 1))),
            PHASE_FORECAST => seen_forecast = true,
            other => return Err(bad(format!("row {}: unknown phase {other:?}", n + 1))),
        }
        let values: Vec<f64> = (2..rec.len())
            .map(|c| {
                rec[c]
                    .parse()
                    .map_err(|_| bad(format!("row {}: bad value {:?}", n + 1, &rec[c])))
            })
            .collect::<Result<_>>()?;
        columns.push(values);
    }
    let t = columns.len();
    let e = Matrix::from_shape_fn((l, t), |(r, c)| columns[c][r]);
    Ok((e, history))
}

pub fn write_series(path: &Path, e: &Matrix, history: usize) -> Result<()> {
    write_text(path, &series_to_string(e, history))
}

pub fn read_series(path: &Path) -> Result<(Matrix, usize)> {
    series_from_str(&read_text(path)?)
}

/// Two-column `index,id` table.
pub fn index_map_to_string(ids: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "id"]).unwrap();
    for (n, id) in ids.iter().enumerate() {
        w.write_record([n.to_string().as_str(), id.as_str()])
            .unwrap();
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

pub fn write_index_map(path: &Path, ids: &[String]) -> Result<()> {
    write_text(path, &index_map_to_string(ids))
}

/// Summary table laid out as `test,D^A,D^B` with one row per metric.
pub fn scores_to_string(a: &SeriesScore, b: &SeriesScore) -> String {
    format!(
        "test,D^A,D^B\nMAE,{},{}\nMDA,{},{}\n",
        a.mae, b.mae, a.mda, b.mda
    )
}

/// Per-factor scores of both sides: `side,factor,mae,mda,n_points`.
pub fn factor_scores_to_string(a: &[SeriesScore], b: &[SeriesScore]) -> String {
    let mut out = String::from("side,factor,mae,mda,n_points\n");
    for (side, scores) in [("D^A", a), ("D^B", b)] {
        for (n, s) in scores.iter().enumerate() {
            writeln!(out, "{side},{n},{},{},{}", s.mae, s.mda, s.n_points).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paratuck2::{init_model, FitConfig};
    use ndarray::array;

    #[test]
    fn tensor_roundtrip_is_exact() {
        let x = Tensor3::from_slices(&[
            array![[0.1, 2.0], [1e-300, -3.5]],
            array![[f64::MAX, 0.0], [1.0 / 3.0, 7.0]],
        ])
        .unwrap();
        let text = tensor_to_string(&x);
        let back = tensor_from_str(&text).unwrap();
        assert_eq!(back, x);
        assert_eq!(tensor_to_string(&back), text);
    }

    #[test]
    fn model_roundtrip_and_flag_check() {
        let cfg = FitConfig {
            p: 2,
            q: 3,
            seed: 5,
            ..FitConfig::default()
        };
        let m = init_model((4, 5, 3), &cfg).unwrap();
        let text = model_to_string(&m);
        assert_eq!(model_from_str(&text).unwrap(), m);
        let lied = text.replace("nonnegative true", "nonnegative false");
        assert!(matches!(model_from_str(&lied), Err(Error::Format { .. })));
        let short = text.replace("block H 2 3", "block H 2 2");
        assert!(model_from_str(&short).is_err());
    }

    #[test]
    fn lstm_roundtrip_is_exact() {
        let mut p = LstmParams::random(2, 3, 4, 9).unwrap();
        p.by[1] = -0.25;
        let text = lstm_to_string(&p);
        assert_eq!(lstm_from_str(&text).unwrap(), p);
        assert!(
            text.contains("block W_i 3 2")
                && text.contains("block b_o 3 1")
                && text.contains("block W_y 4 3")
        );
    }

    #[test]
    fn series_roundtrip_keeps_phase_split() {
        let e = array![[1.0, 2.0, 3.0], [0.5, 0.25, 0.125]];
        let text = series_to_string(&e, 2);
        assert!(text.starts_with("step,phase,f0,f1\n0,history,1,0.5\n"));
        assert!(text.ends_with("2,forecast,3,0.125\n"));
        assert_eq!(series_from_str(&text).unwrap(), (e, 2));
    }

    #[test]
    fn series_rejects_history_after_forecast() {
        let text = "step,phase,f0\n0,forecast,1\n1,history,2\n";
        assert!(series_from_str(text).is_err());
    }

    #[test]
    fn index_map_quotes_awkward_ids() {
        let text = index_map_to_string(&["a".into(), "b,c".into()]);
        assert_eq!(text, "index,id\n0,a\n1,\"b,c\"\n");
    }
}
