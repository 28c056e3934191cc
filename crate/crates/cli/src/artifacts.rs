//! Files the tool reads and writes: model bundles, lexicons, hashes.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use desknmt_core::codec::TextCodec;
use desknmt_core::model::{read_checkpoint, write_checkpoint, Checkpoint};
use desknmt_core::subword::{MergeTable, Vocabulary};
use desknmt_core::textnorm::{CompoundConfig, FreqLexicon};
use desknmt_core::train::{state_from_checkpoint, state_to_checkpoint, TrainState};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A trained model together with the text processing it was trained with.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub state: TrainState,
    pub src: TextCodec,
    pub tgt: TextCodec,
}

const KEY_MERGES: &str = "codec.merges";

fn side_key(side: &str, what: &str) -> String {
    format!("codec.{side}.{what}")
}

pub fn lexicon_to_text(lex: &FreqLexicon) -> String {
    lex.sorted_entries().iter().map(|(w, c)| format!("{w}\t{c}\n")).collect()
}

pub fn lexicon_from_text(text: &str) -> Result<FreqLexicon, CliError> {
    let mut lex = FreqLexicon::new();
    for (i, line) in text.lines().enumerate() {
        let parsed = line.split_once('\t').and_then(|(w, c)| Some((w, c.parse::<u64>().ok()?)));
        match parsed {
            Some((w, c)) => lex.add(w, c),
            None => return Err(CliError::Data(format!("lexicon line {}: expected WORD<TAB>COUNT", i + 1))),
        }
    }
    Ok(lex)
}

fn merges_text(m: &MergeTable) -> String {
    let mut buf = Vec::new();
    m.write_to(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("merge symbols are UTF-8")
}

impl ModelBundle {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = state_to_checkpoint(&self.state);
        ck.metadata.insert(KEY_MERGES.into(), merges_text(&self.src.merges));
        for (side, codec) in [("src", &self.src), ("tgt", &self.tgt)] {
            ck.metadata.insert(side_key(side, "vocab"), codec.vocab.to_text());
            if let Some((lex, cfg)) = &codec.compounds {
                ck.metadata.insert(side_key(side, "lexicon"), lexicon_to_text(lex));
                ck.metadata.insert(
                    side_key(side, "compound_parts"),
                    format!("{} {}", cfg.min_part_len, cfg.max_parts),
                );
            }
        }
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self, CliError> {
        let mut take = |k: &str| ck.metadata.remove(k);
        let missing = |k: &str| CliError::Data(format!("model file lacks {k}; was it written by `desknmt train`?"));
        let merges_raw = take(KEY_MERGES).ok_or_else(|| missing(KEY_MERGES))?;
        let merges = MergeTable::read_from(merges_raw.as_bytes())?;
        let mut codecs = Vec::new();
        for side in ["src", "tgt"] {
            let vk = side_key(side, "vocab");
            let vocab = Vocabulary::from_text(&take(&vk).ok_or_else(|| missing(&vk))?)?;
            let mut codec = TextCodec::new(merges.clone(), vocab);
            if let Some(lex) = take(&side_key(side, "lexicon")) {
                let parts = take(&side_key(side, "compound_parts")).unwrap_or_default();
                let mut nums = parts.split_whitespace().map(str::parse::<usize>);
                let cfg = match (nums.next(), nums.next()) {
                    (Some(Ok(min_part_len)), Some(Ok(max_parts))) => CompoundConfig { min_part_len, max_parts },
                    _ => CompoundConfig::default(),
                };
                codec.compounds = Some((lexicon_from_text(&lex)?, cfg));
            }
            codecs.push(codec);
        }
        let tgt = codecs.pop().expect("two sides");
        let src = codecs.pop().expect("two sides");
        Ok(ModelBundle {
            state: state_from_checkpoint(ck)?,
            src,
            tgt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        Ok(write_checkpoint(path, &self.to_checkpoint())?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::MissingFile(path.display().to_string()));
        }
        Self::from_checkpoint(read_checkpoint(path)?)
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Lines from a file, or from stdin when `path` is `None`.
pub fn read_input(path: Option<&Path>) -> Result<Vec<String>, CliError> {
    match path {
        Some(p) => {
            let file = File::open(p).map_err(|e| CliError::io(p, e))?;
            BufReader::new(file)
                .lines()
                .collect::<io::Result<_>>()
                .map_err(|e| CliError::io(p, e))
        }
        None => Ok(io::stdin().lock().lines().collect::<io::Result<_>>()?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use desknmt_core::model::{ModelConfig, ModelParams};
    use desknmt_core::train::TrainConfig;

    #[test]
    fn bundle_round_trip() {
        let merges = MergeTable::from_pairs([("a", "b"), ("ab", "</w>")]);
        let src_vocab = Vocabulary::from_symbols(["ab".to_string(), "c@@".to_string()]);
        let tgt_vocab = Vocabulary::from_symbols(["x".to_string()]);
        let cfg = ModelConfig {
            src_vocab: src_vocab.len(),
            tgt_vocab: tgt_vocab.len(),
            embedding: 2,
            case_embedding: 1,
            hidden: 2,
            layers: 1,
            ..ModelConfig::default()
        };
        let state = TrainState::new(ModelParams::init(&cfg, 1).unwrap(), &TrainConfig::default(), 1);
        let mut src = TextCodec::new(merges.clone(), src_vocab);
        src.compounds = Some((FreqLexicon::from_tokens(["haus", "haus", "arzt"]), CompoundConfig::default()));
        let bundle = ModelBundle {
            state,
            src,
            tgt: TextCodec::new(merges, tgt_vocab),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back.state, bundle.state);
        assert_eq!(back.src.merges, bundle.src.merges);
        assert_eq!(back.src.vocab.symbols(), bundle.src.vocab.symbols());
        assert_eq!(back.src.compounds, bundle.src.compounds);
        assert!(back.tgt.compounds.is_none());
        assert_eq!(sha256_file(&path).unwrap(), sha256_bytes(&std::fs::read(&path).unwrap()));
    }
}
