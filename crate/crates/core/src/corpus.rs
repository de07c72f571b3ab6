//! Tokenized corpora, BOS-joined chunking, and valid sliding windows.
//!
//! A corpus is a list of integer-token documents plus a vocab size and a
//! reserved BOS id. For counting, documents are joined into one long
//! sequence with a BOS before each document, split into fixed-length
//! chunks, and optionally shuffled. Windows never span chunk boundaries,
//! and a window is valid only if BOS does not occur past index 0.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A token id. Valid ids are `0..vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Magic bytes of the binary corpus format.
pub const CORPUS_MAGIC: &[u8; 5] = b"NGRC1";

/// An ordered list of tokenized documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Vec<TokenId>>,
    vocab_size: u32,
    bos: TokenId,
}

impl Corpus {
    pub fn new(documents: Vec<Vec<TokenId>>, vocab_size: u32, bos: TokenId) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::MalformedHeader("vocab_size must be positive".into()));
        }
        if bos.0 >= vocab_size {
            return Err(Error::TokenOutOfRange { token: bos.0, vocab: vocab_size });
        }
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (i, doc) in documents.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::EmptyDocument(i));
            }
            for &t in doc {
                if t.0 >= vocab_size {
                    return Err(Error::TokenOutOfRange { token: t.0, vocab: vocab_size });
                }
                if t == bos {
                    return Err(Error::BosInDocument { bos: bos.0, doc: i });
                }
            }
        }
        Ok(Self { documents, vocab_size, bos })
    }

    pub fn documents(&self) -> &[Vec<TokenId>] {
        &self.documents
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    /// Total token count across documents, excluding the BOS separators.
    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// Parse the plain-text format: a `vocab=<int> bos=<int>` header line,
    /// then one document per line as space-separated decimal token ids.
    pub fn from_text_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("missing header line".into()))??;
        let (vocab_size, bos) = parse_text_header(&header)?;
        let mut documents = Vec::new();
        for line in lines {
            let line = line?;
            let mut doc = Vec::new();
            for field in line.split_whitespace() {
                let value: u32 = field
                    .parse()
                    .map_err(|_| Error::Format(format!("bad token id {field:?}")))?;
                doc.push(TokenId(value));
            }
            documents.push(doc);
        }
        Corpus::new(documents, vocab_size, TokenId(bos))
    }

    pub fn to_text_writer<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "vocab={} bos={}", self.vocab_size, self.bos.0)?;
        for doc in &self.documents {
            let line: Vec<String> = doc.iter().map(|t| t.0.to_string()).collect();
            writeln!(writer, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Parse the binary format: magic `NGRC1`, little-endian u32 vocab_size,
    /// u32 bos, u64 doc count, then per document a u64 length and u32 tokens.
    pub fn from_binary_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        reader.read_exact(&mut magic)?;
        if &magic != CORPUS_MAGIC {
            return Err(Error::Format("bad corpus magic".into()));
        }
        let vocab_size = read_u32(&mut reader)?;
        let bos = read_u32(&mut reader)?;
        let doc_count = read_u64(&mut reader)?;
        let mut documents = Vec::with_capacity(doc_count.min(1 << 20) as usize);
        for _ in 0..doc_count {
            let len = read_u64(&mut reader)? as usize;
            let mut doc = Vec::with_capacity(len.min(1 << 24));
            for _ in 0..len {
                doc.push(TokenId(read_u32(&mut reader)?));
            }
            documents.push(doc);
        }
        Corpus::new(documents, vocab_size, TokenId(bos))
    }

    pub fn to_binary_writer<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(CORPUS_MAGIC)?;
        writer.write_all(&self.vocab_size.to_le_bytes())?;
        writer.write_all(&self.bos.0.to_le_bytes())?;
        writer.write_all(&(self.documents.len() as u64).to_le_bytes())?;
        for doc in &self.documents {
            writer.write_all(&(doc.len() as u64).to_le_bytes())?;
            for t in doc {
                writer.write_all(&t.0.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Load from a path, sniffing the binary magic when `format` is `Auto`.
    pub fn load(path: &Path, format: CorpusFormat) -> Result<Self> {
        let format = match format {
            CorpusFormat::Auto => {
                let mut head = [0u8; 5];
                let mut f = File::open(path)?;
                let n = f.read(&mut head)?;
                if n == 5 && &head == CORPUS_MAGIC {
                    CorpusFormat::Binary
                } else {
                    CorpusFormat::Text
                }
            }
            other => other,
        };
        match format {
            CorpusFormat::Text => Self::from_text_reader(BufReader::new(File::open(path)?)),
            CorpusFormat::Binary => Self::from_binary_reader(BufReader::new(File::open(path)?)),
            CorpusFormat::Auto => unreachable!(),
        }
    }

    pub fn save(&self, path: &Path, format: CorpusFormat) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        match format {
            CorpusFormat::Binary => self.to_binary_writer(&mut writer)?,
            _ => self.to_text_writer(&mut writer)?,
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Auto,
    Text,
    Binary,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(CorpusFormat::Auto),
            "text" => Ok(CorpusFormat::Text),
            "binary" => Ok(CorpusFormat::Binary),
            other => Err(Error::Format(format!("unknown corpus format {other:?}"))),
        }
    }
}

fn parse_text_header(line: &str) -> Result<(u32, u32)> {
    let mut vocab = None;
    let mut bos = None;
    for field in line.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("expected key=value, got {field:?}")))?;
        let value: u32 = value
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("bad value for {key}: {value:?}")))?;
        match key {
            "vocab" => vocab = Some(value),
            "bos" => bos = Some(value),
            other => return Err(Error::MalformedHeader(format!("unknown key {other:?}"))),
        }
    }
    match (vocab, bos) {
        (Some(v), Some(b)) => Ok((v, b)),
        _ => Err(Error::MalformedHeader("header needs vocab= and bos=".into())),
    }
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(reader: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// How the BOS-joined sequence is split into training chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkingConfig {
    /// Fixed chunk length. Must be at least 2.
    pub chunk_len: usize,
    /// Seed for the deterministic chunk-order shuffle; `None` keeps the
    /// natural order.
    pub shuffle_seed: Option<u64>,
    /// Pad token for the final partial chunk. Padded positions are never
    /// part of any window.
    pub pad: Option<TokenId>,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { chunk_len: 2048, shuffle_seed: None, pad: None }
    }
}

impl ChunkingConfig {
    fn validate(&self, vocab_size: u32) -> Result<()> {
        if self.chunk_len < 2 {
            return Err(Error::InvalidChunking(format!(
                "chunk_len {} < 2",
                self.chunk_len
            )));
        }
        if let Some(pad) = self.pad {
            if pad.0 >= vocab_size {
                return Err(Error::TokenOutOfRange { token: pad.0, vocab: vocab_size });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    tokens: Vec<TokenId>,
    /// Number of real (non-pad) tokens at the front of `tokens`.
    content_len: usize,
    /// Position of this chunk before the shuffle.
    source_index: usize,
}

impl Chunk {
    /// Real tokens only; the padded tail is excluded.
    pub fn content(&self) -> &[TokenId] {
        &self.tokens[..self.content_len]
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }
}

/// The chunked training stream that counting runs over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkedStream {
    chunks: Vec<Chunk>,
    vocab_size: u32,
    bos: TokenId,
    chunk_len: usize,
}

/// Split the BOS-joined document sequence into consecutive chunks of
/// `cfg.chunk_len`, pad the final chunk if a pad token is set, and permute
/// the chunk order with a seeded shuffle.
pub fn chunk(corpus: &Corpus, cfg: &ChunkingConfig) -> Result<ChunkedStream> {
    cfg.validate(corpus.vocab_size())?;
    let mut long = Vec::with_capacity(corpus.token_count() + corpus.documents().len());
    for doc in corpus.documents() {
        long.push(corpus.bos());
        long.extend_from_slice(doc);
    }
    let mut chunks = Vec::with_capacity(long.len() / cfg.chunk_len + 1);
    for (source_index, piece) in long.chunks(cfg.chunk_len).enumerate() {
        let content_len = piece.len();
        let mut tokens = piece.to_vec();
        if let Some(pad) = cfg.pad {
            tokens.resize(cfg.chunk_len, pad);
        }
        chunks.push(Chunk { tokens, content_len, source_index });
    }
    if let Some(seed) = cfg.shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        chunks.shuffle(&mut rng);
    }
    Ok(ChunkedStream {
        chunks,
        vocab_size: corpus.vocab_size(),
        bos: corpus.bos(),
        chunk_len: cfg.chunk_len,
    })
}

impl ChunkedStream {
    /// Document-level stream: one chunk per document (`BOS` + document),
    /// with no fixed-length splitting. Used for unchunked count studies.
    pub fn document_level(corpus: &Corpus) -> Self {
        let mut chunks = Vec::with_capacity(corpus.documents().len());
        let mut max_len = 2;
        for (source_index, doc) in corpus.documents().iter().enumerate() {
            let mut tokens = Vec::with_capacity(doc.len() + 1);
            tokens.push(corpus.bos());
            tokens.extend_from_slice(doc);
            max_len = max_len.max(tokens.len());
            let content_len = tokens.len();
            chunks.push(Chunk { tokens, content_len, source_index });
        }
        ChunkedStream {
            chunks,
            vocab_size: corpus.vocab_size(),
            bos: corpus.bos(),
            chunk_len: max_len,
        }
    }

    /// Assemble a stream directly from raw chunk contents (e.g. a chunks
    /// file written by the CLI). Chunk order is kept as given.
    pub fn from_raw_chunks(
        contents: Vec<Vec<TokenId>>,
        vocab_size: u32,
        bos: TokenId,
        chunk_len: usize,
    ) -> Result<Self> {
        if chunk_len < 2 {
            return Err(Error::InvalidChunking(format!("chunk_len {chunk_len} < 2")));
        }
        if bos.0 >= vocab_size {
            return Err(Error::TokenOutOfRange { token: bos.0, vocab: vocab_size });
        }
        let mut chunks = Vec::with_capacity(contents.len());
        for (source_index, tokens) in contents.into_iter().enumerate() {
            if tokens.len() > chunk_len {
                return Err(Error::InvalidChunking(format!(
                    "chunk {source_index} longer than chunk_len {chunk_len}"
                )));
            }
            for &t in &tokens {
                if t.0 >= vocab_size {
                    return Err(Error::TokenOutOfRange { token: t.0, vocab: vocab_size });
                }
            }
            let content_len = tokens.len();
            chunks.push(Chunk { tokens, content_len, source_index });
        }
        Ok(ChunkedStream { chunks, vocab_size, bos, chunk_len })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    /// Real token count across chunks (pad excluded).
    pub fn token_count(&self) -> usize {
        self.chunks.iter().map(|c| c.content_len).sum()
    }

    /// Every valid length-`n` window: contiguous within one chunk, pad
    /// excluded, and BOS allowed at index 0 only.
    pub fn windows(&self, n: usize) -> Result<impl Iterator<Item = &[TokenId]> + '_> {
        if n < 1 || n > self.chunk_len {
            return Err(Error::WindowLength { n, max: self.chunk_len });
        }
        let bos = self.bos;
        Ok(self
            .chunks
            .iter()
            .flat_map(move |c| valid_windows(c.content(), n, bos)))
    }

    /// Chunk contents in pre-shuffle order, concatenated. Reproduces the
    /// BOS-joined document sequence for fixed-length chunking.
    pub fn joined_in_source_order(&self) -> Vec<TokenId> {
        let mut order: Vec<&Chunk> = self.chunks.iter().collect();
        order.sort_by_key(|c| c.source_index);
        let mut out = Vec::with_capacity(self.token_count());
        for c in order {
            out.extend_from_slice(c.content());
        }
        out
    }
}

/// Valid windows of one chunk's content: BOS must not occur at index > 0.
pub fn valid_windows(content: &[TokenId], n: usize, bos: TokenId) -> impl Iterator<Item = &[TokenId]> {
    content
        .windows(n)
        .filter(move |w| !w[1..].contains(&bos))
}
