use crate::error::{Error, Result};

/// Reserved id that terminates every completion and opens every sequence.
pub const EOT: usize = 0;

/// Extra non-ASCII symbols the style layer emits.
const EXTRA: [char; 3] = ['«', '»', '—'];

/// Character-level vocabulary: end-of-text, newline, printable ASCII and the
/// three typographic marks used by style profiles.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    chars: Vec<char>,
}

impl Tokenizer {
    pub fn standard() -> Self {
        let mut chars = vec!['\u{0}', '\n'];
        chars.extend((0x20u8..=0x7e).map(char::from));
        chars.extend(EXTRA);
        Self { chars }
    }

    pub fn vocab_size(&self) -> usize {
        self.chars.len()
    }

    pub fn id(&self, c: char) -> Result<usize> {
        let id = match c {
            '\n' => 1,
            ' '..='~' => c as usize - 0x20 + 2,
            _ => match EXTRA.iter().position(|&e| e == c) {
                Some(i) => 2 + 95 + i,
                None => return Err(Error::Vocab(format!("character {c:?} is not in the vocabulary"))),
            },
        };
        Ok(id)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Decodes ids, stopping at the first end-of-text.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id == EOT {
                break;
            }
            let c = self
                .chars
                .get(id)
                .ok_or_else(|| Error::Vocab(format!("token id {id} is out of range")))?;
            out.push(*c);
        }
        Ok(out)
    }
}

/// Instruction that opens every rewrite prompt.
pub const INSTRUCTION: &str = "Paraphrase";

/// Prompt text for rewriting `input`: instruction, input, then the output slot.
pub fn prompt_text(input: &str) -> String {
    format!("{INSTRUCTION}: {input}\n")
}

/// Prompt ids: end-of-text marker followed by the prompt text.
pub fn encode_prompt(tok: &Tokenizer, input: &str) -> Result<Vec<usize>> {
    let mut ids = vec![EOT];
    ids.extend(tok.encode(&prompt_text(input))?);
    Ok(ids)
}

/// Completion ids: the output text followed by end-of-text.
pub fn encode_completion(tok: &Tokenizer, output: &str) -> Result<Vec<usize>> {
    let mut ids = tok.encode(output)?;
    ids.push(EOT);
    Ok(ids)
}
