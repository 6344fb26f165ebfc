//! Embedding CSV: `label,labeled,f0,...,f{d-1}`.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use gcdlab::numerics::Matrix;
use gcdlab::synthdata::GcdDataset;

/// Reads an embedding CSV. Known classes default to every class that has at
/// least one labeled sample.
pub fn read_embeddings<R: Read>(reader: R, known: Option<&[usize]>) -> Result<GcdDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().context("reading header")?.clone();
    if header.len() < 3 || &header[0] != "label" || &header[1] != "labeled" {
        bail!("header must start with `label,labeled,f0`");
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            bail!("header column {} is `{name}`, expected `f{j}`", j + 3);
        }
    }
    let dim = header.len() - 2;
    let mut labels = Vec::new();
    let mut flags = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("line {line}"))?;
        if rec.len() != dim + 2 {
            bail!(
                "line {line}: expected {} fields, found {}",
                dim + 2,
                rec.len()
            );
        }
        let label: usize = rec[0]
            .trim()
            .parse()
            .with_context(|| format!("line {line}: label `{}`", &rec[0]))?;
        let labeled = match rec[1].trim() {
            "0" => false,
            "1" => true,
            other => bail!("line {line}: labeled must be 0 or 1, found `{other}`"),
        };
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("line {line}: f{j} `{field}`"))?;
            if !v.is_finite() {
                bail!("line {line}: f{j} is not finite");
            }
            data.push(v);
        }
        labels.push(label);
        flags.push(labeled);
    }
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    let known: BTreeSet<usize> = match known {
        Some(k) => k.iter().copied().collect(),
        None => labels
            .iter()
            .zip(&flags)
            .filter(|(_, &l)| l)
            .map(|(&c, _)| c)
            .collect(),
    };
    Ok(GcdDataset::new(features, labels, known, flags)?)
}

pub fn write_embeddings<W: Write>(writer: W, ds: &GcdDataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["label".to_string(), "labeled".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (i, row) in ds.features.iter_rows().enumerate() {
        let mut rec = vec![
            ds.labels[i].to_string(),
            u8::from(ds.labeled_flags[i]).to_string(),
        ];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gcdlab::synthdata::{generate_dataset, SynthSpec};

    #[test]
    fn round_trip_is_exact() {
        let ds = generate_dataset(&SynthSpec {
            n_known: 2,
            n_novel: 2,
            per_class: 6,
            dim: 3,
            separation: 3.0,
            noise: 0.5,
            labeled_ratio: 0.5,
            seed: 9,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,labeled,f0,f1,f2\n"));
        let back = read_embeddings(&buf[..], None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = "label,labeled,f0\n0,2,1.0\n";
        let err = read_embeddings(bad.as_bytes(), None).unwrap_err();
        assert!(format!("{err:#}").contains("line 2"), "{err:#}");
        assert!(read_embeddings("label,labeled,x\n".as_bytes(), None).is_err());
        assert!(read_embeddings("label,labeled,f0\n0,1,nan\n".as_bytes(), None).is_err());
    }
}
