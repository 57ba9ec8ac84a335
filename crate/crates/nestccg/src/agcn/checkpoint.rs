//! Model checkpoints: a plain-text format that round-trips every
//! parameter bit-exactly (floats are written with 17 significant
//! digits).

use std::fs;
use std::path::Path;

use crate::chunk_graph::{EdgeTypes, GraphMode};
use crate::corpus::TagSet;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Parameter};

use super::{AgcnLayer, Encoder, ModelFlags, TaggerModel, Vocab};

const MAGIC: &str = "nestccg-model v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn render_model(model: &TaggerModel) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("d0={}\n", model.dim()));
    out.push_str(&format!("layers={}\n", model.num_layers()));
    out.push_str(&format!("tagset={}\n", model.tagset.len()));
    out.push_str(&format!("attention={}\n", model.flags.attention));
    out.push_str(&format!("graph={}\n", model.flags.graph));
    out.push_str(&format!("in_chunk={}\n", model.flags.edge_types.in_chunk));
    out.push_str(&format!("cross_chunk={}\n", model.flags.edge_types.cross_chunk));
    out.push_str(&format!("dropout={}\n", model.dropout));
    out.push_str(&format!("encoder={}\n", model.encoder.kind_name()));
    if let Encoder::Lookup { vocab, .. } = &model.encoder {
        out.push_str(&format!("vocab={}\n", vocab.len()));
    }
    for tag in model.tagset.tags() {
        out.push_str("tag ");
        out.push_str(tag);
        out.push('\n');
    }
    if let Encoder::Lookup { vocab, .. } = &model.encoder {
        for word in vocab.words() {
            out.push_str("word ");
            out.push_str(word);
            out.push('\n');
        }
    }
    for (name, param) in model.param_names().iter().zip(model.params()) {
        let m = &param.value;
        out.push_str(&format!("param {name} {} {}\n", m.rows(), m.cols()));
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_model(model: &TaggerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TaggerModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text).map_err(|e| match e {
        Error::Invalid(msg) => Error::Invalid(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.lineno += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::Invalid(format!("truncated checkpoint at line {}", self.lineno)))
    }

    fn expect_kv(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "line {}: expected \"{key}=...\", got {line:?}",
                    self.lineno
                ))
            })
    }

    fn expect_prefixed(&mut self, prefix: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(prefix).ok_or_else(|| {
            Error::Invalid(format!(
                "line {}: expected \"{prefix}...\", got {line:?}",
                self.lineno
            ))
        })
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Invalid(format!("expected true/false, got {s:?}"))),
    }
}

pub fn parse_model(text: &str) -> Result<TaggerModel> {
    let mut r = Reader {
        lines: text.lines(),
        lineno: 0,
    };
    let magic = r.next()?;
    if magic != MAGIC {
        return Err(Error::Invalid(format!(
            "not a model checkpoint (header {magic:?})"
        )));
    }
    let dim: usize = r
        .expect_kv("d0")?
        .parse()
        .map_err(|_| Error::Invalid("bad d0".into()))?;
    let layers: usize = r
        .expect_kv("layers")?
        .parse()
        .map_err(|_| Error::Invalid("bad layers".into()))?;
    let tagset_len: usize = r
        .expect_kv("tagset")?
        .parse()
        .map_err(|_| Error::Invalid("bad tagset size".into()))?;
    let attention = parse_bool(r.expect_kv("attention")?)?;
    let graph = GraphMode::parse(r.expect_kv("graph")?)?;
    let in_chunk = parse_bool(r.expect_kv("in_chunk")?)?;
    let cross_chunk = parse_bool(r.expect_kv("cross_chunk")?)?;
    let dropout: f64 = r
        .expect_kv("dropout")?
        .parse()
        .map_err(|_| Error::Invalid("bad dropout".into()))?;
    let encoder_kind = r.expect_kv("encoder")?.to_string();
    let vocab_len = if encoder_kind == "lookup" {
        r.expect_kv("vocab")?
            .parse::<usize>()
            .map_err(|_| Error::Invalid("bad vocab size".into()))?
    } else if encoder_kind == "precomputed" {
        0
    } else {
        return Err(Error::Invalid(format!(
            "unknown encoder kind {encoder_kind:?}"
        )));
    };

    let mut tags = Vec::with_capacity(tagset_len);
    for _ in 0..tagset_len {
        tags.push(r.expect_prefixed("tag ")?.to_string());
    }
    let tagset = TagSet::from_ordered(tags)?;

    let mut words = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        words.push(r.expect_prefixed("word ")?.to_string());
    }

    let mut read_param = |name: &str| -> Result<Parameter> {
        let header = r.expect_prefixed("param ")?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != name {
            return Err(Error::Invalid(format!(
                "expected parameter {name:?}, got {header:?}"
            )));
        }
        let rows: usize = fields[1]
            .parse()
            .map_err(|_| Error::Invalid(format!("bad row count for {name}")))?;
        let cols: usize = fields[2]
            .parse()
            .map_err(|_| Error::Invalid(format!("bad column count for {name}")))?;
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let line = r.next()?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != cols {
                return Err(Error::Invalid(format!(
                    "parameter {name} row {i} has {} values, expected {cols}",
                    values.len()
                )));
            }
            for (j, v) in values.iter().enumerate() {
                let parsed: f64 = v
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad float {v:?} in {name}")))?;
                m.set(i, j, parsed);
            }
        }
        Ok(Parameter::new(m))
    };

    let encoder = if encoder_kind == "lookup" {
        let vocab = Vocab::new(words)?;
        let embedding = read_param("embedding")?;
        if embedding.value.shape() != (vocab.table_rows(), dim) {
            return Err(Error::Shape(format!(
                "embedding shape {:?} does not match vocab {} and d0 {dim}",
                embedding.value.shape(),
                vocab.len()
            )));
        }
        Encoder::Lookup { vocab, embedding }
    } else {
        Encoder::Precomputed { dim }
    };

    let mut layer_params = Vec::with_capacity(layers);
    for li in 0..layers {
        let mut layer = AgcnLayer::zeros(dim);
        layer.w = read_param(&format!("layer{li}.w"))?;
        layer.b = read_param(&format!("layer{li}.b"))?;
        layer.w_left = read_param(&format!("layer{li}.w_left"))?;
        layer.w_right = read_param(&format!("layer{li}.w_right"))?;
        layer.w_self = read_param(&format!("layer{li}.w_self"))?;
        layer.ln_gain = read_param(&format!("layer{li}.ln_gain"))?;
        layer.ln_bias = read_param(&format!("layer{li}.ln_bias"))?;
        for (label, p) in [
            ("w", &layer.w),
            ("w_left", &layer.w_left),
            ("w_right", &layer.w_right),
            ("w_self", &layer.w_self),
        ] {
            if p.value.shape() != (dim, dim) {
                return Err(Error::Shape(format!(
                    "layer{li}.{label} must be {dim}x{dim}"
                )));
            }
        }
        for (label, p) in [
            ("b", &layer.b),
            ("ln_gain", &layer.ln_gain),
            ("ln_bias", &layer.ln_bias),
        ] {
            if p.value.shape() != (1, dim) {
                return Err(Error::Shape(format!("layer{li}.{label} must be 1x{dim}")));
            }
        }
        layer_params.push(layer);
    }

    let w_d = read_param("w_d")?;
    if w_d.value.shape() != (tagset.len(), dim) {
        return Err(Error::Shape(format!(
            "w_d shape {:?} does not match tagset {} and d0 {dim}",
            w_d.value.shape(),
            tagset.len()
        )));
    }

    Ok(TaggerModel {
        encoder,
        layers: layer_params,
        w_d,
        tagset,
        flags: ModelFlags {
            attention,
            graph,
            edge_types: EdgeTypes {
                in_chunk,
                cross_chunk,
            },
        },
        dropout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agcn::EncoderConfig;
    use crate::corpus::OTHER_TAG;

    fn sample_model() -> TaggerModel {
        let tags = vec!["NP".to_string(), "N/N".to_string(), OTHER_TAG.to_string()];
        TaggerModel::new(
            EncoderConfig::Lookup {
                vocabulary: vec!["alpha".into(), "beta".into()],
                dim: 5,
            },
            2,
            TagSet::from_ordered(tags).unwrap(),
            ModelFlags::default(),
            0.2,
            42,
        )
        .unwrap()
    }

    #[test]
    fn render_parse_roundtrip_is_bit_exact() {
        let model = sample_model();
        let text = render_model(&model);
        let back = parse_model(&text).unwrap();
        assert_eq!(model.tagset, back.tagset);
        assert_eq!(model.flags, back.flags);
        assert_eq!(model.dropout, back.dropout);
        for (a, b) in model.params().iter().zip(back.params()) {
            assert_eq!(a.value, b.value, "parameters must round-trip bit-exactly");
        }
        // and the rendering itself is a fixed point
        assert_eq!(render_model(&back), text);
    }

    #[test]
    fn rejects_foreign_headers() {
        assert!(parse_model("something else\n").is_err());
        assert!(parse_model("").is_err());
    }

    #[test]
    fn seventeen_digit_floats_roundtrip() {
        for v in [
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            -2.5e300,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} via {s}");
        }
    }
}
