use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::data::{Vocab, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Half-width of the uniform draw for tokens without a pretrained vector.
pub const INIT_RANGE: f64 = 0.1;

/// Randomly initialized table: uniform(-0.1, 0.1), zero rows for `<pad>` and `<unk>`.
pub fn random_embeddings(vocab: &Vocab, dim: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(vocab.len(), dim);
    for id in 0..vocab.len() {
        if id == PAD_ID || id == UNK_ID {
            continue;
        }
        for x in m.row_mut(id) {
            *x = rng.uniform(-INIT_RANGE, INIT_RANGE);
        }
    }
    m
}

/// Reads `token v1 … vk` lines. Vocabulary tokens found in the file get
/// their vector; the rest are drawn as in [`random_embeddings`].
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocab, dim: usize, rng: &mut Rng) -> Result<Matrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let at = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| at(format!("bad value '{f}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => {
                if values.len() != dim {
                    return Err(at(format!(
                        "vector has {} dimensions, expected {dim}",
                        values.len()
                    )));
                }
                width = Some(values.len());
            }
            Some(w) if w != values.len() => {
                return Err(at(format!(
                    "vector has {} dimensions, previous lines have {w}",
                    values.len()
                )));
            }
            Some(_) => {}
        }
        if let Some(id) = vocab.get(token) {
            found.entry(id).or_insert(values);
        }
    }
    let mut m = Matrix::zeros(vocab.len(), dim);
    for id in 0..vocab.len() {
        if id == PAD_ID || id == UNK_ID {
            continue;
        }
        match found.get(&id) {
            Some(v) => m.row_mut(id).copy_from_slice(v),
            None => {
                for x in m.row_mut(id) {
                    *x = rng.uniform(-INIT_RANGE, INIT_RANGE);
                }
            }
        }
    }
    Ok(m)
}
