//! Corpus, vocabulary, and latent-sidecar file formats.
//!
//! Corpus: one sentence per line, whitespace-separated tokens. Vocabulary:
//! one token per line, line number = id. Both are pure data files (diffable,
//! no header); the latents sidecar carries a version header since its layout
//! is ours.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::models::{Latent, Sentence, Vocab};

pub const LATENTS_HEADER: &str = "# latentlm latents v1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: unknown token {token:?}")]
    UnknownToken { line: usize, token: String },
    #[error("vocabulary file is empty")]
    EmptyVocab,
    #[error("vocabulary is missing reserved token {0:?}")]
    MissingReserved(&'static str),
    #[error("line {line}: {reason}")]
    BadLatent { line: usize, reason: String },
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<(), CorpusError> {
    let mut out = String::new();
    for t in vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocab, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
    if tokens.is_empty() {
        return Err(CorpusError::EmptyVocab);
    }
    let bos = tokens
        .iter()
        .position(|t| t == Vocab::BOS_TOKEN)
        .ok_or(CorpusError::MissingReserved(Vocab::BOS_TOKEN))?;
    let eos = tokens
        .iter()
        .position(|t| t == Vocab::EOS_TOKEN)
        .ok_or(CorpusError::MissingReserved(Vocab::EOS_TOKEN))?;
    Ok(Vocab::new(tokens, bos, eos))
}

pub fn save_corpus(path: &Path, corpus: &[Sentence], vocab: &Vocab) -> Result<(), CorpusError> {
    let mut out = String::new();
    for sentence in corpus {
        let mut first = true;
        for &id in sentence {
            if !first {
                out.push(' ');
            }
            out.push_str(vocab.token(id));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a corpus against a vocabulary. Unknown tokens fail with their line
/// number; empty lines are skipped with a warning on stderr.
pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<Vec<Sentence>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let mut corpus = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            eprintln!("warning: {}:{lineno}: empty line skipped", path.display());
            continue;
        }
        let mut sentence = Vec::new();
        for token in line.split_whitespace() {
            match vocab.lookup(token) {
                Some(id) => sentence.push(id),
                None => {
                    return Err(CorpusError::UnknownToken { line: lineno, token: token.to_string() })
                }
            }
        }
        corpus.push(sentence);
    }
    Ok(corpus)
}

/// Writes the latents sampled alongside a synthetic corpus: one line per
/// sentence, `d <k>` for a mixture indicator, `p <states...>` for a path,
/// `v <floats...>` for a vector (17 significant digits).
pub fn save_latents(path: &Path, latents: &[Latent]) -> Result<(), CorpusError> {
    let mut out = String::from(LATENTS_HEADER);
    out.push('\n');
    for z in latents {
        match z {
            Latent::Discrete(k) => {
                let _ = writeln!(out, "d {k}");
            }
            Latent::Path(p) => {
                out.push('p');
                for s in p {
                    let _ = write!(out, " {s}");
                }
                out.push('\n');
            }
            Latent::Vector(v) => {
                out.push('v');
                for x in v {
                    let _ = write!(out, " {x:.16e}");
                }
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_latents(path: &Path) -> Result<Vec<Latent>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LATENTS_HEADER => {}
        other => {
            return Err(CorpusError::BadLatent {
                line: 1,
                reason: format!("bad header {other:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let kind = fields.next().ok_or_else(|| CorpusError::BadLatent {
            line: lineno,
            reason: "empty record".into(),
        })?;
        let parse_err = |reason: String| CorpusError::BadLatent { line: lineno, reason };
        match kind {
            "d" => {
                let k = fields
                    .next()
                    .ok_or_else(|| parse_err("missing index".into()))?
                    .parse()
                    .map_err(|e| parse_err(format!("bad index: {e}")))?;
                out.push(Latent::Discrete(k));
            }
            "p" => {
                let states = fields
                    .map(|f| f.parse().map_err(|e| parse_err(format!("bad state: {e}"))))
                    .collect::<Result<Vec<usize>, _>>()?;
                out.push(Latent::Path(states));
            }
            "v" => {
                let values = fields
                    .map(|f| f.parse().map_err(|e| parse_err(format!("bad value: {e}"))))
                    .collect::<Result<Vec<f64>, _>>()?;
                out.push(Latent::Vector(values));
            }
            other => return Err(parse_err(format!("unknown latent kind {other:?}"))),
        }
    }
    Ok(out)
}
