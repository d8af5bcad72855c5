//! ITN-aware subword tokenization: byte-pair merges over a byte-level seed
//! vocabulary, with the grammar's spoken words inserted as protected atomic
//! pieces so labels always attach to whole rewrite-relevant tokens
//! ("ninety" never splits into nine + ty).

use std::collections::HashMap;
use std::path::Path;

use crate::error::{ItnError, Result};

/// SentencePiece-style word-start marker; spaces become this character
/// before segmentation.
pub const WORD_MARKER: &str = "\u{2581}";

pub const UNK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const MARKER_ID: u32 = 2;

#[derive(Debug, Clone)]
struct Piece {
    bytes: Vec<u8>,
    protected: bool,
}

/// A piece-to-id table with reserved unknown/padding ids and a protected set
/// of words that always tokenize to a single piece.
#[derive(Debug, Clone)]
pub struct PieceVocab {
    pieces: Vec<Piece>,
    index: HashMap<Vec<u8>, u32>,
    max_piece_len: usize,
}

impl PieceVocab {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn is_protected(&self, id: u32) -> bool {
        self.pieces
            .get(id as usize)
            .map(|p| p.protected)
            .unwrap_or(false)
    }

    pub fn piece_text(&self, id: u32) -> String {
        match id {
            UNK_ID => "<unk>".to_string(),
            PAD_ID => "<pad>".to_string(),
            _ => escape_bytes(&self.pieces[id as usize].bytes),
        }
    }

    /// Greedy longest-match-first segmentation of raw bytes. Protected words
    /// are ordinary vocabulary entries, so the longest match picks them up
    /// before any subword split.
    fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let mut matched = None;
            let limit = self.max_piece_len.min(bytes.len() - pos);
            for len in (1..=limit).rev() {
                if let Some(&id) = self.index.get(&bytes[pos..pos + len]) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                }
                None => {
                    ids.push(UNK_ID);
                    pos += 1;
                }
            }
        }
        ids
    }

    /// Encode text: spaces become the word marker, then greedy segmentation.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let replaced = text.replace(' ', WORD_MARKER);
        self.encode_bytes(replaced.as_bytes())
    }

    /// Encode a word sequence, returning piece ids and the word index each
    /// piece belongs to. Words after the first carry the word marker.
    pub fn encode_tokens(&self, words: &[&str]) -> (Vec<u32>, Vec<usize>) {
        let mut ids = Vec::new();
        let mut word_of = Vec::new();
        for (w_idx, word) in words.iter().enumerate() {
            let text = if w_idx == 0 {
                word.to_string()
            } else {
                format!("{WORD_MARKER}{word}")
            };
            for id in self.encode_bytes(text.as_bytes()) {
                ids.push(id);
                word_of.push(w_idx);
            }
        }
        (ids, word_of)
    }

    /// Decode piece ids back to text. Unknown pieces render as U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes: Vec<u8> = Vec::new();
        let mut out = String::new();
        let flush = |bytes: &mut Vec<u8>, out: &mut String| {
            if !bytes.is_empty() {
                out.push_str(&String::from_utf8_lossy(bytes));
                bytes.clear();
            }
        };
        for &id in ids {
            match id {
                UNK_ID => {
                    flush(&mut bytes, &mut out);
                    out.push('\u{FFFD}');
                }
                PAD_ID => {}
                _ => match self.pieces.get(id as usize) {
                    Some(p) => bytes.extend_from_slice(&p.bytes),
                    None => {
                        flush(&mut bytes, &mut out);
                        out.push('\u{FFFD}');
                    }
                },
            }
        }
        flush(&mut bytes, &mut out);
        out.replace(WORD_MARKER, " ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// Compact binary form used inside model files: count, then per piece a
    /// flag byte, a length byte, and the raw bytes. Ids are positional.
    pub fn to_compact_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pieces.len() * 6 + 4);
        out.extend_from_slice(&(self.pieces.len() as u32).to_le_bytes());
        for piece in &self.pieces {
            debug_assert!(piece.bytes.len() <= u8::MAX as usize);
            out.push(u8::from(piece.protected));
            out.push(piece.bytes.len() as u8);
            out.extend_from_slice(&piece.bytes);
        }
        out
    }

    pub fn from_compact_bytes(data: &[u8]) -> Result<PieceVocab> {
        let bad = |reason: &str| ItnError::Lexicon {
            line: 0,
            reason: format!("compact vocab: {reason}"),
        };
        if data.len() < 4 {
            return Err(bad("truncated header"));
        }
        let count = u32::from_le_bytes([data[0], data[1], data[2], data[3]]) as usize;
        let mut pieces = Vec::with_capacity(count);
        let mut pos = 4usize;
        for _ in 0..count {
            if pos + 2 > data.len() {
                return Err(bad("truncated piece header"));
            }
            let protected = data[pos] == 1;
            let len = data[pos + 1] as usize;
            pos += 2;
            if pos + len > data.len() {
                return Err(bad("truncated piece bytes"));
            }
            pieces.push(Piece {
                bytes: data[pos..pos + len].to_vec(),
                protected,
            });
            pos += len;
        }
        if pos != data.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self::from_pieces(pieces))
    }

    pub fn load(path: &Path) -> Result<PieceVocab> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Render as the TSV vocabulary format `piece<TAB>id<TAB>protected_flag`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (id, piece) in self.pieces.iter().enumerate() {
            let text = match id as u32 {
                UNK_ID => "<unk>".to_string(),
                PAD_ID => "<pad>".to_string(),
                _ => escape_bytes(&piece.bytes),
            };
            out.push_str(&format!(
                "{text}\t{id}\t{}\n",
                if piece.protected { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<PieceVocab> {
        let mut pieces: Vec<Piece> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(ItnError::Lexicon {
                    line: idx + 1,
                    reason: format!("vocab line needs 3 columns, got {}", cols.len()),
                });
            }
            let id: usize = cols[1].parse().map_err(|_| ItnError::Lexicon {
                line: idx + 1,
                reason: "bad id".into(),
            })?;
            if id != pieces.len() {
                return Err(ItnError::Lexicon {
                    line: idx + 1,
                    reason: format!("ids must be dense, expected {}", pieces.len()),
                });
            }
            let protected = cols[2] == "1";
            let bytes = if id as u32 == UNK_ID || id as u32 == PAD_ID {
                Vec::new()
            } else {
                unescape_bytes(cols[0]).ok_or_else(|| ItnError::Lexicon {
                    line: idx + 1,
                    reason: "bad escape in piece".into(),
                })?
            };
            pieces.push(Piece { bytes, protected });
        }
        Ok(Self::from_pieces(pieces))
    }

    fn from_pieces(pieces: Vec<Piece>) -> PieceVocab {
        let mut index = HashMap::new();
        let mut max_piece_len = 1;
        for (id, piece) in pieces.iter().enumerate() {
            if (id as u32) == UNK_ID || (id as u32) == PAD_ID || piece.bytes.is_empty() {
                continue;
            }
            max_piece_len = max_piece_len.max(piece.bytes.len());
            index.entry(piece.bytes.clone()).or_insert(id as u32);
        }
        PieceVocab {
            pieces,
            index,
            max_piece_len,
        }
    }
}

fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'\t' => out.push_str("\\t"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            0x20..=0x7E => out.push(b as char),
            _ => {
                // Multi-byte UTF-8 passes through when printable.
                out.push_str(&format!("\\x{b:02x}"));
            }
        }
    }
    out
}

fn unescape_bytes(text: &str) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next()? {
            '\\' => out.push(b'\\'),
            't' => out.push(b'\t'),
            'n' => out.push(b'\n'),
            'r' => out.push(b'\r'),
            'x' => {
                let hi = chars.next()?.to_digit(16)?;
                let lo = chars.next()?.to_digit(16)?;
                out.push((hi * 16 + lo) as u8);
            }
            _ => return None,
        }
    }
    Some(out)
}

/// Learn a vocabulary from spoken-side text: reserved specials, the word
/// marker, all 256 single bytes, the protected words (bare and
/// marker-prefixed), then frequency-greedy pair merges up to `target_size`.
/// Deterministic given the corpus and size.
pub fn build_vocab<I, S>(corpus: I, protected: &[String], target_size: usize) -> Result<PieceVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut protected_sorted: Vec<String> = protected.to_vec();
    protected_sorted.sort();
    protected_sorted.dedup();

    let needed = 3 + 256 + 2 * protected_sorted.len();
    if target_size < needed {
        return Err(ItnError::VocabTooSmall {
            needed,
            requested: target_size,
        });
    }

    let mut pieces: Vec<Piece> = Vec::with_capacity(target_size);
    pieces.push(Piece { bytes: Vec::new(), protected: false }); // <unk>
    pieces.push(Piece { bytes: Vec::new(), protected: false }); // <pad>
    pieces.push(Piece {
        bytes: WORD_MARKER.as_bytes().to_vec(),
        protected: false,
    });
    for b in 0u16..256 {
        pieces.push(Piece {
            bytes: vec![b as u8],
            protected: false,
        });
    }
    for word in &protected_sorted {
        pieces.push(Piece {
            bytes: word.as_bytes().to_vec(),
            protected: true,
        });
        pieces.push(Piece {
            bytes: format!("{WORD_MARKER}{word}").into_bytes(),
            protected: true,
        });
    }
    // Duplicates between seeds (e.g. a one-byte protected word) keep the
    // first id via from_pieces; merges below only add fresh byte strings.
    let mut vocab = PieceVocab::from_pieces(pieces);

    // Segment the corpus with protected-aware greedy matching so merge
    // counting never crosses a protected atom.
    let mut sequences: Vec<Vec<u32>> = Vec::new();
    for line in corpus {
        let line = line.as_ref();
        if line.is_empty() {
            continue;
        }
        let replaced = line.replace(' ', WORD_MARKER);
        sequences.push(vocab.encode_bytes(replaced.as_bytes()));
    }

    while vocab.len() < target_size {
        // Count adjacent pairs, skipping any side that is protected.
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for seq in &sequences {
            for w in seq.windows(2) {
                let (a, b) = (w[0], w[1]);
                if vocab.is_protected(a) || vocab.is_protected(b) {
                    continue;
                }
                if a <= PAD_ID || b <= PAD_ID {
                    continue;
                }
                *counts.entry((a, b)).or_default() += 1;
            }
        }
        let best = counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            // A merge must not bury a word boundary inside a piece.
            .filter(|(&p, _)| {
                let bytes = merged_bytes(&vocab, p);
                marker_only_at_start(&bytes)
            })
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb)
                    .then_with(|| {
                        // Deterministic tie-break: lexicographically smaller
                        // merged bytes win.
                        let ka = merged_bytes(&vocab, **pa);
                        let kb = merged_bytes(&vocab, **pb);
                        kb.cmp(&ka)
                    })
                    .then_with(|| pb.cmp(pa))
            })
            .map(|(&p, _)| p);
        let Some((a, b)) = best else { break };
        let bytes = merged_bytes(&vocab, (a, b));
        if vocab.index.contains_key(&bytes) {
            // Already representable; rewrite sequences and continue.
        } else {
            vocab.max_piece_len = vocab.max_piece_len.max(bytes.len());
            vocab.index.insert(bytes.clone(), vocab.pieces.len() as u32);
            vocab.pieces.push(Piece {
                bytes,
                protected: false,
            });
        }
        let new_id = vocab.index[&merged_bytes(&vocab, (a, b))];
        for seq in &mut sequences {
            let mut i = 0;
            let mut out = Vec::with_capacity(seq.len());
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            *seq = out;
        }
    }
    Ok(vocab)
}

fn merged_bytes(vocab: &PieceVocab, pair: (u32, u32)) -> Vec<u8> {
    let mut bytes = vocab.pieces[pair.0 as usize].bytes.clone();
    bytes.extend_from_slice(&vocab.pieces[pair.1 as usize].bytes);
    bytes
}

fn marker_only_at_start(bytes: &[u8]) -> bool {
    let marker = WORD_MARKER.as_bytes();
    let mut pos = 0;
    while pos + marker.len() <= bytes.len() {
        if &bytes[pos..pos + marker.len()] == marker && pos != 0 {
            return false;
        }
        pos += 1;
    }
    true
}

/// Every spoken word the grammar templates can emit, each also in its
/// marker-prefixed form; this is the protected set for `build_vocab`.
pub fn grammar_spoken_vocabulary(grammar: &crate::grammar::Grammar) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for rule in grammar.rules() {
        for alt in &rule.alternatives {
            for item in &alt.items {
                if let crate::grammar::TemplateItem::Word(w) = item {
                    words.push(w.word.clone());
                }
            }
        }
    }
    words.sort();
    words.dedup();
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Grammar;

    fn small_vocab() -> PieceVocab {
        build_vocab(
            ["ninety nine bottles", "one twenty dollar", "meet me at three thirty"],
            &["ninety".into(), "twenty".into(), "one".into(), "dollar".into()],
            600,
        )
        .unwrap()
    }

    #[test]
    fn protected_words_are_single_pieces() {
        let v = small_vocab();
        assert_eq!(v.encode("ninety").len(), 1);
        assert_eq!(v.encode("twenty").len(), 1);
        // Mid-sentence (marker-prefixed) forms too.
        let (ids, word_of) = v.encode_tokens(&["one", "twenty", "dollar"]);
        assert_eq!(ids.len(), 3);
        assert_eq!(word_of, vec![0, 1, 2]);
    }

    #[test]
    fn round_trip_identity() {
        let v = small_vocab();
        for text in ["ninety nine bottles", "hello unseen words", "a b  c"] {
            assert_eq!(v.decode(&v.encode(text)), text, "{text:?}");
        }
    }

    #[test]
    fn merges_learn_frequent_pairs() {
        let v = build_vocab(["aaaa", "aaaa"], &[], 260).unwrap();
        // 259 seeds plus exactly one merge.
        assert_eq!(v.len(), 260);
        assert!(v.index.contains_key("aa".as_bytes()));
    }

    #[test]
    fn vocab_too_small_rejected() {
        let err = build_vocab(["x"], &["ninety".into()], 100).unwrap_err();
        assert!(matches!(err, ItnError::VocabTooSmall { .. }));
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = small_vocab();
        assert_eq!(v.piece_text(UNK_ID), "<unk>");
        assert_eq!(v.piece_text(PAD_ID), "<pad>");
        assert_eq!(v.decode(&[UNK_ID]), "\u{FFFD}");
    }

    #[test]
    fn compact_bytes_round_trip() {
        let v = small_vocab();
        let bytes = v.to_compact_bytes();
        let back = PieceVocab::from_compact_bytes(&bytes).unwrap();
        assert_eq!(back.len(), v.len());
        assert_eq!(back.render(), v.render());
        let text = "ninety nine bottles of something";
        assert_eq!(back.encode(text), v.encode(text));
    }

    #[test]
    fn render_parse_round_trip() {
        let v = small_vocab();
        let rendered = v.render();
        let parsed = PieceVocab::parse(&rendered).unwrap();
        assert_eq!(parsed.len(), v.len());
        let text = "one twenty dollar and some tail";
        assert_eq!(parsed.encode(text), v.encode(text));
        assert_eq!(parsed.decode(&parsed.encode(text)), text);
    }

    #[test]
    fn grammar_vocabulary_protects_whole_default_grammar() {
        let grammar = Grammar::default_english();
        let protected = grammar_spoken_vocabulary(&grammar);
        assert!(protected.contains(&"ninety".to_string()));
        let v = build_vocab(
            ["ninety one dollars and ninety cents"],
            &protected,
            3 + 256 + 2 * protected.len() + 64,
        )
        .unwrap();
        for word in &protected {
            assert_eq!(v.encode(word).len(), 1, "{word} must stay atomic");
            assert_eq!(
                v.encode_bytes(format!("{WORD_MARKER}{word}").as_bytes()).len(),
                1,
                "marker-prefixed {word} must stay atomic"
            );
        }
    }
}
