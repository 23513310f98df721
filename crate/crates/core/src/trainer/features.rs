use std::io::Write;

use crate::autodiff::Tape;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Scalar, Tensor};

/// Writes the activations at `site` as TSV: a header `label\tf0\tf1…`, then
/// one row per sample (in dataset order, at most `limit` rows) holding the
/// label and the flattened feature vector. Returns the number of rows.
pub fn export_features<T: Scalar, W: Write>(
    net: &Network<T>,
    split: &Split,
    site: &str,
    limit: Option<usize>,
    batch_size: usize,
    mut out: W,
) -> Result<usize> {
    let capture = |x: Tensor<T>| -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xi = tape.input(x);
        let fwd = net.forward(&mut tape, xi, Some(site))?;
        let v = fwd.captured.ok_or_else(|| Error::UnknownSite {
            site: site.to_string(),
            valid: net.site_names().join(", "),
        })?;
        Ok(tape.value(v).clone())
    };

    let [c, h, w] = net.architecture().input_shape();
    let probe = capture(Tensor::zeros([1, c, h, w]))?;
    let width = probe.numel();
    let mut header = String::from("label");
    for i in 0..width {
        header.push_str(&format!("\tf{i}"));
    }
    writeln!(out, "{header}")?;

    let n = limit.map_or(split.len(), |l| l.min(split.len()));
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = split.batch::<T>(chunk, None);
        let feats = capture(x)?;
        for (row, label) in feats.data().chunks_exact(width).zip(labels) {
            let mut line = label.to_string();
            for v in row {
                line.push('\t');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
    }
    out.flush()?;
    Ok(n)
}
