//! A miniature ordered-merge tokenizer and the answer patch point.
//!
//! Responses look like `<trace text><answer> <answer text></answer>`. The
//! trace is cut at the token for `<answer` (without the closing `>`), so the
//! splice between trace and answer region never falls inside a token, and a
//! reference answer can be patched in without re-tokenization drift.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::seqcore::{TokenId, TokenSeq};

pub const BOUNDARY: &str = "<answer";
pub const CLOSING_CHAR: char = '>';
pub const CLOSING_WRAPPER: &str = "</answer>";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTokenizer {
    alphabet: Vec<char>,
    merges: Vec<(TokenId, TokenId)>,
    strings: Vec<String>,
    index: HashMap<String, TokenId>,
    boundary: TokenId,
    /// Whether the scored answer region ends with the closing wrapper.
    pub score_wrapper: bool,
}

impl ToyTokenizer {
    /// Builds a tokenizer from a base alphabet and merge rules given as
    /// string pairs. Each operand must already be a token when its rule is
    /// reached.
    pub fn new(alphabet: &[char], merges: &[(&str, &str)], boundary: &str) -> Result<Self> {
        let mut tok = Self {
            alphabet: Vec::new(),
            merges: Vec::new(),
            strings: Vec::new(),
            index: HashMap::new(),
            boundary: 0,
            score_wrapper: true,
        };
        for &c in alphabet {
            let s = c.to_string();
            if tok.index.contains_key(&s) {
                return Err(Error::InvalidTokenizer(format!("duplicate alphabet character {c:?}")));
            }
            tok.push_token(s);
            tok.alphabet.push(c);
        }
        if !alphabet.contains(&CLOSING_CHAR) {
            return Err(Error::InvalidTokenizer(format!("alphabet lacks the closing character {CLOSING_CHAR:?}")));
        }
        for (line, &(l, r)) in merges.iter().enumerate() {
            let lid = tok.lookup(l).ok_or_else(|| {
                Error::InvalidTokenizer(format!("merge {}: left operand {l:?} is not a token yet", line + 1))
            })?;
            let rid = tok.lookup(r).ok_or_else(|| {
                Error::InvalidTokenizer(format!("merge {}: right operand {r:?} is not a token yet", line + 1))
            })?;
            let joined = format!("{l}{r}");
            if tok.index.contains_key(&joined) {
                return Err(Error::InvalidTokenizer(format!("merge {}: token {joined:?} already exists", line + 1)));
            }
            tok.merges.push((lid, rid));
            tok.push_token(joined);
        }
        tok.boundary = tok
            .lookup(boundary)
            .ok_or_else(|| Error::InvalidTokenizer(format!("boundary {boundary:?} is not a token")))?;
        tok.validate()?;
        Ok(tok)
    }

    /// Parses the plain-text merge format: one `left right` pair per line in
    /// rule order, `#` starts a comment line, `\s` is a space and `\\` a
    /// backslash.
    pub fn from_merge_text(alphabet: &str, text: &str, boundary: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::InvalidTokenizer(format!(
                    "line {}: expected `left right`, got {raw:?}",
                    n + 1
                )));
            }
            pairs.push((unescape(parts[0])?, unescape(parts[1])?));
        }
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(l, r)| (l.as_str(), r.as_str())).collect();
        let chars: Vec<char> = unescape(alphabet)?.chars().collect();
        Self::new(&chars, &refs, boundary)
    }

    fn push_token(&mut self, s: String) {
        self.index.insert(s.clone(), self.strings.len() as TokenId);
        self.strings.push(s);
    }

    fn lookup(&self, s: &str) -> Option<TokenId> {
        self.index.get(s).copied()
    }

    /// A token must never straddle the seam between the boundary and the
    /// closing character: no token reads `u` + `>` + `v` where `u` ends the
    /// boundary string or is ended by it.
    fn validate(&self) -> Result<()> {
        let b = self.strings[self.boundary as usize].clone();
        for s in &self.strings {
            for (k, c) in s.char_indices() {
                let u = &s[..k];
                if c == CLOSING_CHAR && !u.is_empty() && (b.ends_with(u) || u.ends_with(b.as_str())) {
                    return Err(Error::InvalidTokenizer(format!(
                        "token {s:?} spans the seam between {b:?} and {CLOSING_CHAR:?}"
                    )));
                }
            }
        }
        if self.merges.iter().any(|&(l, _)| l == self.boundary) {
            return Err(Error::InvalidTokenizer("boundary token is the left operand of a merge".into()));
        }
        if self.tokenize(&b)?.0 != [self.boundary] {
            return Err(Error::InvalidTokenizer(format!("{b:?} does not tokenize to the boundary token")));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.strings.len()
    }

    pub fn boundary_token(&self) -> TokenId {
        self.boundary
    }

    pub fn token_str(&self, t: TokenId) -> Option<&str> {
        self.strings.get(t as usize).map(String::as_str)
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        let mut seq = Vec::with_capacity(text.len());
        for c in text.chars() {
            let mut buf = [0u8; 4];
            seq.push(self.lookup(c.encode_utf8(&mut buf)).ok_or(Error::OutOfAlphabet(c))?);
        }
        let base = self.alphabet.len() as TokenId;
        for (rank, &(l, r)) in self.merges.iter().enumerate() {
            if seq.len() < 2 {
                break;
            }
            let merged = base + rank as TokenId;
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            seq = out;
        }
        Ok(TokenSeq(seq))
    }

    pub fn detokenize(&self, seq: &TokenSeq) -> Result<String> {
        let mut s = String::new();
        for &t in seq.iter() {
            let piece = self
                .token_str(t)
                .ok_or(Error::InvalidToken { token: t, vocab: self.strings.len() })?;
            s.push_str(piece);
        }
        Ok(s)
    }

    /// Token strings joined by `|`, for reports.
    pub fn show(&self, seq: &TokenSeq) -> String {
        seq.iter().map(|&t| self.token_str(t).unwrap_or("?")).collect::<Vec<_>>().join("|")
    }

    /// Tokens of the scored answer region for a reference answer text.
    pub fn reference_region(&self, reference: &str) -> Result<TokenSeq> {
        let mut text = String::from(CLOSING_CHAR);
        text.push_str(reference);
        if self.score_wrapper {
            text.push_str(CLOSING_WRAPPER);
        }
        self.tokenize(&text)
    }
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('\\') => out.push('\\'),
            other => {
                return Err(Error::InvalidTokenizer(format!("bad escape \\{}", other.map_or(String::new(), String::from))))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitResponse {
    /// Prefix through the first boundary token, inclusive.
    pub trace_tokens: TokenSeq,
    pub answer_region_tokens: TokenSeq,
    pub format_ok: bool,
}

impl SplitResponse {
    /// Text between the closing character and the closing wrapper, when the
    /// format is intact.
    pub fn answer_text(&self, tok: &ToyTokenizer) -> Result<Option<String>> {
        if !self.format_ok {
            return Ok(None);
        }
        let region = tok.detokenize(&self.answer_region_tokens)?;
        Ok(Some(region[CLOSING_CHAR.len_utf8()..region.len() - CLOSING_WRAPPER.len()].to_string()))
    }
}

pub fn split_at_boundary(tok: &ToyTokenizer, response: &TokenSeq) -> Result<SplitResponse> {
    let Some(pos) = response.iter().position(|&t| t == tok.boundary) else {
        return Ok(SplitResponse {
            trace_tokens: response.clone(),
            answer_region_tokens: TokenSeq::default(),
            format_ok: false,
        });
    };
    let trace_tokens = TokenSeq(response.0[..=pos].to_vec());
    let answer_region_tokens = TokenSeq(response.0[pos + 1..].to_vec());
    let region = tok.detokenize(&answer_region_tokens)?;
    let format_ok = region.len() >= CLOSING_CHAR.len_utf8() + CLOSING_WRAPPER.len()
        && region.starts_with(CLOSING_CHAR)
        && region.ends_with(CLOSING_WRAPPER);
    Ok(SplitResponse { trace_tokens, answer_region_tokens, format_ok })
}

/// Trace tokens, bit-for-bit, followed by the tokenized reference region.
pub fn patch_reference(tok: &ToyTokenizer, split: &SplitResponse, reference: &str) -> Result<TokenSeq> {
    Ok(split.trace_tokens.concat(&tok.reference_region(reference)?))
}

/// Whether re-tokenizing the detokenized sequence reproduces it.
pub fn is_stable(tok: &ToyTokenizer, seq: &TokenSeq) -> Result<bool> {
    Ok(tok.tokenize(&tok.detokenize(seq)?)? == *seq)
}

/// The ablation split: cut the string after the full `<answer>` marker and
/// tokenize each side on its own. `None` when the marker is absent.
pub fn text_split(tok: &ToyTokenizer, text: &str) -> Result<Option<(TokenSeq, TokenSeq)>> {
    let marker = format!("{BOUNDARY}{CLOSING_CHAR}");
    let Some(at) = text.find(&marker) else { return Ok(None) };
    let cut = at + marker.len();
    Ok(Some((tok.tokenize(&text[..cut])?, tok.tokenize(&text[cut..])?)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftCase {
    pub text: String,
    /// Tokenization of the whole response (what a sampler would emit).
    pub whole: TokenSeq,
    /// Token-space split re-joined.
    pub token_split: TokenSeq,
    /// Text-space split, each side tokenized separately, re-joined.
    pub text_split: Option<TokenSeq>,
}

impl DriftCase {
    pub fn token_split_drifts(&self) -> bool {
        self.token_split != self.whole
    }

    pub fn text_split_drifts(&self) -> bool {
        self.text_split.as_ref().is_some_and(|s| *s != self.whole)
    }
}

impl fmt::Display for DriftCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let token = if self.token_split_drifts() { "DRIFT" } else { "ok" };
        let text = match (&self.text_split, self.text_split_drifts()) {
            (None, _) => "n/a",
            (_, true) => "DRIFT",
            _ => "ok",
        };
        write!(f, "{:?}: token-split {token} / text-split {text}", self.text)
    }
}

pub fn drift_case(tok: &ToyTokenizer, text: &str) -> Result<DriftCase> {
    let whole = tok.tokenize(text)?;
    let split = split_at_boundary(tok, &whole)?;
    let token_split = tok
        .tokenize(&tok.detokenize(&split.trace_tokens)?)?
        .concat(&tok.tokenize(&tok.detokenize(&split.answer_region_tokens)?)?);
    let text_split = text_split(tok, text)?.map(|(a, b)| a.concat(&b));
    Ok(DriftCase { text: text.to_string(), whole, token_split, text_split })
}

/// Alphabet of the built-in fixture tokenizer, in merge-file escapes.
pub const FIXTURE_ALPHABET: &str = r"<>/answerbdox{}\\0123456789\s.t";

/// Merge table of the built-in fixture. The wrapper merges come first; the
/// later `>` + space merge is what makes string-level splitting drift.
pub const FIXTURE_MERGES: &str = r"# answer-open marker, without its closing character
< a
<a n
<an s
<ans w
<answ e
<answe r
# closing wrapper
< /
</ a
</a n
</an s
</ans w
</answ e
</answe r
</answer >
# merges that cross a string-level cut
> \s
\s t
# answer body
\\ b
\\b o
\\bo x
\\box e
\\boxe d
1 2
t t
. .
";

/// Fixture tokenizer used by the demo, tests and benches.
pub fn fixture_tokenizer() -> ToyTokenizer {
    ToyTokenizer::from_merge_text(FIXTURE_ALPHABET, FIXTURE_MERGES, BOUNDARY).expect("fixture tokenizer is valid")
}

/// Responses on which a string-level split drifts under the fixture merges.
pub fn adversarial_fixtures() -> Vec<&'static str> {
    vec![
        "tt..<answer> \\boxed{12}</answer>",
        "t 12<answer> 7</answer>",
        "..<answer> \\boxed{3}</answer>",
        "tt<answer>12</answer>",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(tok: &ToyTokenizer, pieces: &[&str]) -> Vec<TokenId> {
        pieces.iter().map(|p| tok.lookup(p).unwrap()).collect()
    }

    #[test]
    fn base_character_is_one_token() {
        let tok = fixture_tokenizer();
        assert_eq!(tok.tokenize("7").unwrap().0, ids(&tok, &["7"]));
    }

    #[test]
    fn marker_splits_before_closing_character() {
        let tok = fixture_tokenizer();
        let t = tok.tokenize("<answer>").unwrap();
        assert_eq!(t.0, vec![tok.boundary_token(), tok.lookup(">").unwrap()]);
        assert_eq!(tok.show(&t), "<answer|>");
    }

    #[test]
    fn out_of_alphabet_names_character() {
        let tok = fixture_tokenizer();
        assert_eq!(tok.tokenize("ab?").unwrap_err(), Error::OutOfAlphabet('?'));
    }

    #[test]
    fn wrapper_and_body_merges() {
        let tok = fixture_tokenizer();
        let t = tok.tokenize("tt<answer> \\boxed{12}</answer>").unwrap();
        assert_eq!(tok.show(&t), "tt|<answer|> |\\boxed|{|12|}|</answer>");
    }

    #[test]
    fn split_is_inclusive_of_boundary() {
        let tok = fixture_tokenizer();
        let r = tok.tokenize("03456<answer>7</answer>").unwrap();
        assert_eq!(r.0[5], tok.boundary_token());
        let s = split_at_boundary(&tok, &r).unwrap();
        assert_eq!(s.trace_tokens.len(), 6);
        assert!(s.format_ok);
        assert_eq!(s.answer_text(&tok).unwrap().as_deref(), Some("7"));
    }

    #[test]
    fn missing_boundary_or_wrapper_breaks_format() {
        let tok = fixture_tokenizer();
        let r = tok.tokenize("0345").unwrap();
        let s = split_at_boundary(&tok, &r).unwrap();
        assert!(!s.format_ok);
        assert!(s.answer_region_tokens.is_empty());
        assert_eq!(s.trace_tokens, r);
        let r = tok.tokenize("03<answer>7").unwrap();
        assert!(!split_at_boundary(&tok, &r).unwrap().format_ok);
        let r = tok.tokenize("03<answer</answer>").unwrap();
        assert!(!split_at_boundary(&tok, &r).unwrap().format_ok);
    }

    #[test]
    fn patch_is_idempotent_and_keeps_trace() {
        let tok = fixture_tokenizer();
        let r = tok.tokenize("tt 3<answer> 12</answer>").unwrap();
        let s = split_at_boundary(&tok, &r).unwrap();
        assert_eq!(patch_reference(&tok, &s, " 12").unwrap(), r);
        let p = patch_reference(&tok, &s, " \\boxed{9}").unwrap();
        assert_eq!(&p.0[..s.trace_tokens.len()], s.trace_tokens.as_slice());
        assert!(is_stable(&tok, &p).unwrap());
    }

    #[test]
    fn region_without_wrapper() {
        let mut tok = fixture_tokenizer();
        tok.score_wrapper = false;
        assert_eq!(tok.show(&tok.reference_region("7").unwrap()), ">|7");
    }

    #[test]
    fn text_split_drifts_on_adversarial_fixture() {
        let tok = fixture_tokenizer();
        let cases: Vec<DriftCase> = adversarial_fixtures().iter().map(|t| drift_case(&tok, t).unwrap()).collect();
        assert!(cases.iter().all(|c| !c.token_split_drifts()));
        assert!(cases.iter().any(DriftCase::text_split_drifts));
        let c = drift_case(&tok, "t<answer> 7</answer>").unwrap();
        assert!(c.text_split_drifts());
        assert!(c.to_string().contains("text-split DRIFT"));
    }

    #[test]
    fn merge_file_format() {
        let tok = ToyTokenizer::from_merge_text(
            r"<answer>/\s\\",
            "# comment\n< a\n<a n\n\n<an s\n<ans w\n<answ e\n<answe r\n> \\s\n\\\\ \\\\\n",
            BOUNDARY,
        )
        .unwrap();
        assert_eq!(tok.vocab_size(), 11 + 8);
        assert_eq!(tok.show(&tok.tokenize("<answer> \\\\").unwrap()), "<answer|> |\\\\");
    }

    #[test]
    fn rejects_bad_tables() {
        let bad = |merges: &str| ToyTokenizer::from_merge_text("<answer>", merges, BOUNDARY).unwrap_err();
        let base = "< a\n<a n\n<an s\n<ans w\n<answ e\n<answe r\n";
        assert!(matches!(bad("x y\n"), Error::InvalidTokenizer(_)));
        assert!(matches!(bad("< a b\n"), Error::InvalidTokenizer(_)));
        assert!(matches!(bad("\\q a\n"), Error::InvalidTokenizer(_)));
        // no boundary token
        assert!(matches!(bad("< a\n"), Error::InvalidTokenizer(_)));
        // a token that swallows the closing character
        for extra in ["r >\n", "e r\ner >\n", "<answer >\n"] {
            let err = bad(&format!("{base}{extra}"));
            assert!(matches!(err, Error::InvalidTokenizer(_)), "{extra:?}");
        }
        // `r` merged early steals the boundary
        let err = bad("e r\n< a\n<a n\n<an s\n<ans w\n<answ e\n<answe r\n");
        assert!(matches!(err, Error::InvalidTokenizer(_)));
    }

    #[test]
    fn detokenize_rejects_unknown_ids() {
        let tok = fixture_tokenizer();
        assert!(matches!(tok.detokenize(&TokenSeq(vec![999])), Err(Error::InvalidToken { .. })));
    }
}
