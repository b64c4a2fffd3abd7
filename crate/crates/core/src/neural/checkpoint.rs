//! Model checkpoints: a text header followed by raw little-endian `f32`
//! tensor data in header order.
//!
//! ```text
//! wordseg-checkpoint 1
//! config <src_emb> <enc_hidden> <tgt_emb> <dec_hidden> <att_hidden>
//! source_vocab <n> <tok_0> ... <tok_n-1>
//! target_vocab <n> <tok_0> ... <tok_n-1>
//! tensor <name> <rows> <cols>
//! ...
//! end
//! <binary payload>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig};
use super::tape::{ParamSet, Tensor};
use super::vocab::Vocab;
use crate::error::{Error, Result};

const MAGIC: &str = "wordseg-checkpoint 1";

pub fn write_checkpoint<W: Write>(model: &Model<f32>, mut out: W) -> std::io::Result<()> {
    let c = &model.config;
    writeln!(out, "{MAGIC}")?;
    writeln!(
        out,
        "config {} {} {} {} {}",
        c.source_embedding,
        c.encoder_hidden,
        c.target_embedding,
        c.decoder_hidden,
        c.attention_hidden
    )?;
    for (name, v) in [
        ("source_vocab", &model.source_vocab),
        ("target_vocab", &model.target_vocab),
    ] {
        writeln!(out, "{name} {} {}", v.len(), v.tokens().join(" "))?;
    }
    for t in &model.params.tensors {
        writeln!(out, "tensor {} {} {}", t.name, t.rows, t.cols)?;
    }
    writeln!(out, "end")?;
    for t in &model.params.tensors {
        for x in &t.data {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Model<f32>> {
    let mut reader = BufReader::new(input);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| bad(lines.len() + 1, e.to_string()))?;
        if n == 0 {
            return Err(bad(lines.len() + 1, "header not terminated by `end`"));
        }
        let line = line.trim_end_matches('\n').to_string();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad(1, "not a checkpoint"));
    }
    let nums = |line: usize, fields: &[&str]| -> Result<Vec<usize>> {
        fields
            .iter()
            .map(|f| {
                f.parse()
                    .map_err(|_| bad(line, format!("bad integer `{f}`")))
            })
            .collect()
    };
    let cfg_fields: Vec<&str> = lines.get(1).map_or(vec![], |l| l.split(' ').collect());
    if cfg_fields.len() != 6 || cfg_fields[0] != "config" {
        return Err(bad(2, "expected config line"));
    }
    let d = nums(2, &cfg_fields[1..])?;
    let config = ModelConfig {
        source_embedding: d[0],
        encoder_hidden: d[1],
        target_embedding: d[2],
        decoder_hidden: d[3],
        attention_hidden: d[4],
    };
    let vocab = |idx: usize, key: &str| -> Result<Vocab> {
        let line = lines
            .get(idx)
            .ok_or_else(|| bad(idx + 1, format!("missing {key}")))?;
        let mut f = line.split(' ');
        if f.next() != Some(key) {
            return Err(bad(idx + 1, format!("expected {key}")));
        }
        let n: usize = f
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| bad(idx + 1, "missing vocabulary size"))?;
        let tokens: Vec<String> = f.map(String::from).collect();
        if tokens.len() != n {
            return Err(bad(
                idx + 1,
                format!("expected {n} tokens, found {}", tokens.len()),
            ));
        }
        Ok(Vocab::from_tokens(tokens))
    };
    let source_vocab = vocab(2, "source_vocab")?;
    let target_vocab = vocab(3, "target_vocab")?;
    let mut params = ParamSet::new();
    for (i, line) in lines.iter().enumerate().skip(4) {
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 4 || f[0] != "tensor" {
            return Err(bad(i + 1, "expected tensor line"));
        }
        let dims = nums(i + 1, &f[2..])?;
        let mut t = Tensor::zeros(f[1], dims[0], dims[1]);
        let mut buf = vec![0u8; 4 * t.data.len()];
        reader
            .read_exact(&mut buf)
            .map_err(|e| bad(i + 1, format!("tensor {}: {e}", f[1])))?;
        for (x, b) in t.data.iter_mut().zip(buf.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        params.add(t);
    }
    Model::with_params(config, source_vocab, target_vocab, params)
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}
