//! Closed toy vocabulary and learned token embeddings.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{rng, Bound, Graph, ParamId, ParamStore, Tensor, Var};

pub const VOCABULARY: &[&str] = &[
    "a", "box", "cube", "block", "slab", "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
    "small", "medium", "large", "tall", "wide", "flat", "thin",
];

pub const MAX_TOKENS: usize = 8;

/// Map a whitespace-separated caption to vocabulary indices.
pub fn tokenize(caption: &str) -> Result<Vec<usize>> {
    let ids = caption
        .split_whitespace()
        .map(|w| {
            VOCABULARY
                .iter()
                .position(|v| v.eq_ignore_ascii_case(w))
                .ok_or_else(|| Error::invalid("tokenize", format!("`{w}` is not in the vocabulary")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ids.is_empty() || ids.len() > MAX_TOKENS {
        return Err(Error::invalid(
            "tokenize",
            format!("captions need 1..={MAX_TOKENS} tokens, got {}", ids.len()),
        ));
    }
    Ok(ids)
}

/// `L x d_model` token features, `1 <= L <= 8`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    tokens: Tensor,
}

impl TextEmbedding {
    pub fn new(tokens: Tensor) -> Result<Self> {
        if tokens.rank() != 2 || tokens.shape()[0] > MAX_TOKENS {
            return Err(Error::invalid(
                "text_embedding",
                format!("expected [L <= {MAX_TOKENS}, d_model], got {:?}", tokens.shape()),
            ));
        }
        if !tokens.all_finite() {
            return Err(Error::invalid("text_embedding", "non-finite value"));
        }
        Ok(TextEmbedding { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_model(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tokens
    }
}

/// Learned embedding table over [`VOCABULARY`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEncoder {
    pub table: ParamId,
    pub d_model: usize,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, r: &mut rng::Rng) -> Self {
        let t = rng::normal_tensor(&[VOCABULARY.len(), d_model], 1.0, r);
        TextEncoder {
            table: store.add(format!("{name}.table"), t),
            d_model,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() || ids.len() > MAX_TOKENS {
            return Err(Error::invalid("text_encoder", format!("{} tokens", ids.len())));
        }
        let index: Rc<[Option<usize>]> = ids.iter().map(|&i| Some(i)).collect();
        g.gather_rows(p.var(self.table), index)
    }

    pub fn embed(&self, store: &ParamStore, ids: &[usize]) -> Result<TextEmbedding> {
        let mut g = Graph::new();
        let table = g.constant(store.get(self.table).clone());
        if ids.is_empty() || ids.len() > MAX_TOKENS {
            return Err(Error::invalid("text_encoder", format!("{} tokens", ids.len())));
        }
        let index: Rc<[Option<usize>]> = ids.iter().map(|&i| Some(i)).collect();
        let v = g.gather_rows(table, index)?;
        TextEmbedding::new(g.value(v).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_known_words() {
        assert_eq!(tokenize("a small red box").unwrap(), vec![0, 13, 5, 1]);
        assert!(tokenize("a purple box").is_err());
        assert!(tokenize("").is_err());
        assert!(tokenize("a a a a a a a a a").is_err());
    }

    #[test]
    fn embedding_rows_come_from_the_table() {
        let mut store = ParamStore::new();
        let enc = TextEncoder::new(&mut store, "text", 4, &mut rng::seeded(1));
        let e = enc.embed(&store, &[2, 5]).unwrap();
        let table = store.get(enc.table).data();
        assert_eq!(&e.tensor().data()[0..4], &table[8..12]);
        assert_eq!(&e.tensor().data()[4..8], &table[20..24]);
    }
}
