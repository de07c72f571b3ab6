//! The chunks file: a chunked stream persisted between pipeline stages.
//!
//! Header `#chunks v=1 vocab=<int> bos=<int> chunk_len=<int>`, then one
//! chunk per line as space-separated token ids (pad excluded, order as
//! produced by the shuffle).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ngram_rules::corpus::{ChunkedStream, TokenId};

pub fn write_chunks(stream: &ChunkedStream, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "#chunks v=1 vocab={} bos={} chunk_len={}",
        stream.vocab_size(),
        stream.bos().0,
        stream.chunk_len()
    )?;
    for chunk in stream.chunks() {
        let line: Vec<String> = chunk.content().iter().map(|t| t.0.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chunks(path: &Path) -> Result<ChunkedStream> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("open {path:?}"))?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty chunks file"))??;
    let mut vocab = None;
    let mut bos = None;
    let mut chunk_len = None;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#chunks") {
        bail!("chunks file must start with #chunks");
    }
    for field in fields {
        let (key, value) =
            field.split_once('=').ok_or_else(|| anyhow!("bad header field {field:?}"))?;
        match key {
            "v" if value == "1" => {}
            "v" => bail!("unsupported chunks version {value}"),
            "vocab" => vocab = Some(value.parse::<u32>()?),
            "bos" => bos = Some(value.parse::<u32>()?),
            "chunk_len" => chunk_len = Some(value.parse::<usize>()?),
            other => bail!("unknown chunks header key {other:?}"),
        }
    }
    let (Some(vocab), Some(bos), Some(chunk_len)) = (vocab, bos, chunk_len) else {
        bail!("chunks header needs vocab=, bos=, chunk_len=");
    };
    let mut contents = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut chunk = Vec::new();
        for field in line.split_whitespace() {
            chunk.push(TokenId(field.parse::<u32>()?));
        }
        contents.push(chunk);
    }
    Ok(ChunkedStream::from_raw_chunks(contents, vocab, TokenId(bos), chunk_len)?)
}
