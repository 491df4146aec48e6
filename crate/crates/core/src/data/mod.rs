//! Grids, tasks, token serialization and batching.
//!
//! Vocabulary: colors `0..=9` map to ids `0..=9`, followed by six specials.
//! A grid pair is laid out as
//!
//! ```text
//! BOS  <input rows, ROW_SEP after each>  IO_SEP  <output rows, ROW_SEP after each>  EOS
//! ```
//!
//! The loss covers the output region (colors and their `ROW_SEP`s) plus the
//! final `EOS`. In inference mode the output colors are replaced by `MASK`,
//! keeping the separators so the canvas shape is known; the model fills every
//! masked position in a single forward pass. Training feeds the same masked
//! view and scores it against the true tokens.

mod arc;
pub mod synthetic;

use serde::{Deserialize, Serialize};

pub use arc::{load_arc_dir, load_arc_file, task_to_json, write_arc_file};
pub use synthetic::{generate_synthetic, Family};

use crate::error::{Error, Result};

pub const NUM_COLORS: usize = 10;
pub const PAD: usize = 10;
pub const BOS: usize = 11;
pub const EOS: usize = 12;
pub const ROW_SEP: usize = 13;
pub const IO_SEP: usize = 14;
pub const MASK: usize = 15;
pub const VOCAB_SIZE: usize = 16;
pub const MAX_GRID_DIM: usize = 30;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > MAX_GRID_DIM || cols > MAX_GRID_DIM {
            return Err(Error::Invalid(format!("grid dimensions {rows}x{cols} outside 1..=30")));
        }
        if cells.len() != rows * cols {
            return Err(Error::Invalid(format!("{rows}x{cols} grid needs {} cells, got {}", rows * cols, cells.len())));
        }
        if let Some(&bad) = cells.iter().find(|&&c| c as usize >= NUM_COLORS) {
            return Err(Error::Invalid(format!("cell value {bad} outside 0..=9")));
        }
        Ok(Grid { rows, cols, cells })
    }

    pub fn filled(rows: usize, cols: usize, color: u8) -> Result<Self> {
        Grid::new(rows, cols, vec![color; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid("ragged grid rows".into()));
        }
        Grid::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        assert!((v as usize) < NUM_COLORS, "color {v} out of range");
        self.cells[r * self.cols + c] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.cols).map(<[u8]>::to_vec).collect()
    }

    /// Tokens for this grid: each row followed by `ROW_SEP`.
    fn push_tokens(&self, out: &mut Vec<usize>) {
        for row in self.cells.chunks(self.cols) {
            out.extend(row.iter().map(|&c| c as usize));
            out.push(ROW_SEP);
        }
    }

    fn token_len(&self) -> usize {
        self.rows * (self.cols + 1)
    }
}

impl TryFrom<Vec<Vec<u8>>> for Grid {
    type Error = Error;

    fn try_from(rows: Vec<Vec<u8>>) -> Result<Self> {
        Grid::from_rows(&rows)
    }
}

impl From<Grid> for Vec<Vec<u8>> {
    fn from(g: Grid) -> Self {
        g.to_rows()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub input: Grid,
    pub output: Grid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub task_id: String,
    pub train: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl Task {
    pub fn new(task_id: impl Into<String>, train: Vec<Pair>, test: Vec<Pair>) -> Result<Self> {
        let task_id = task_id.into();
        if train.is_empty() || test.is_empty() {
            return Err(Error::Invalid(format!("task {task_id} needs at least one train and one test pair")));
        }
        Ok(Task { task_id, train, test })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Output region holds the true tokens.
    Train,
    /// Output colors are replaced by `MASK`.
    Inference,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    /// True where the model is scored.
    pub loss_mask: Vec<bool>,
    /// True at real (unpadded) positions.
    pub pad_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The model's view: every scored color replaced by `MASK`.
    pub fn masked_input(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .zip(&self.loss_mask)
            .map(|(&t, &scored)| if scored && t < NUM_COLORS { MASK } else { t })
            .collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.loss_mask.len() != n || self.pad_mask.len() != n {
            return Err(Error::Invalid("token/mask length mismatch".into()));
        }
        if self.loss_mask.iter().zip(&self.pad_mask).any(|(&l, &p)| l && !p) {
            return Err(Error::Invalid("loss position outside real positions".into()));
        }
        if !self.loss_mask.iter().any(|&l| l) {
            return Err(Error::Invalid("sequence has no loss positions".into()));
        }
        Ok(())
    }
}

/// Token count of a serialized pair.
pub fn pair_len(input: &Grid, output: &Grid) -> usize {
    3 + input.token_len() + output.token_len()
}

pub fn tokenize_pair(input: &Grid, output: &Grid, mode: Mode, max_seq_len: usize) -> Result<TokenSequence> {
    let len = pair_len(input, output);
    if len > max_seq_len {
        return Err(Error::SequenceTooLong { len, limit: max_seq_len });
    }
    let mut tokens = Vec::with_capacity(len);
    tokens.push(BOS);
    input.push_tokens(&mut tokens);
    tokens.push(IO_SEP);
    let out_start = tokens.len();
    output.push_tokens(&mut tokens);
    tokens.push(EOS);
    let loss_mask: Vec<bool> = (0..len).map(|i| i >= out_start).collect();
    if mode == Mode::Inference {
        for t in &mut tokens[out_start..] {
            if *t < NUM_COLORS {
                *t = MASK;
            }
        }
    }
    Ok(TokenSequence { tokens, loss_mask, pad_mask: vec![true; len] })
}

fn parse_rows(tokens: &[usize]) -> Result<Grid> {
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut current = Vec::new();
    for &t in tokens {
        match t {
            c if c < NUM_COLORS => current.push(c as u8),
            ROW_SEP => rows.push(std::mem::take(&mut current)),
            other => return Err(Error::Invalid(format!("unexpected token {other} inside a grid"))),
        }
    }
    if !current.is_empty() {
        return Err(Error::Invalid("grid row missing its ROW_SEP".into()));
    }
    Grid::from_rows(&rows)
}

/// Inverse of [`tokenize_pair`] in train mode. Trailing padding is ignored.
pub fn detokenize(tokens: &[usize]) -> Result<(Grid, Grid)> {
    let end = tokens.iter().rposition(|&t| t != PAD).map_or(0, |i| i + 1);
    let tokens = &tokens[..end];
    if tokens.len() < 3 || tokens[0] != BOS || tokens[end - 1] != EOS {
        return Err(Error::Invalid("sequence must start with BOS and end with EOS".into()));
    }
    let body = &tokens[1..end - 1];
    let sep = body.iter().position(|&t| t == IO_SEP).ok_or_else(|| Error::Invalid("missing IO_SEP".into()))?;
    Ok((parse_rows(&body[..sep])?, parse_rows(&body[sep + 1..])?))
}

/// A right-padded batch of sequences, flattened row-major as `[batch, seq_len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq_len: usize,
    /// Model inputs (scored colors masked).
    pub inputs: Vec<usize>,
    /// True tokens.
    pub targets: Vec<usize>,
    pub loss_mask: Vec<bool>,
    pub pad_mask: Vec<bool>,
}

impl Batch {
    pub fn view(&self) -> crate::model::BatchView<'_> {
        crate::model::BatchView {
            tokens: &self.inputs,
            pad_mask: &self.pad_mask,
            batch: self.batch,
            seq_len: self.seq_len,
        }
    }
}

/// Pads `seqs` on the right to `pad_to` and stacks them.
pub fn pad_batch(seqs: &[&TokenSequence], pad_to: usize) -> Result<Batch> {
    if seqs.is_empty() {
        return Err(Error::Invalid("cannot batch zero sequences".into()));
    }
    if let Some(s) = seqs.iter().find(|s| s.len() > pad_to) {
        return Err(Error::SequenceTooLong { len: s.len(), limit: pad_to });
    }
    let rows = seqs.len() * pad_to;
    let mut b = Batch {
        batch: seqs.len(),
        seq_len: pad_to,
        inputs: Vec::with_capacity(rows),
        targets: Vec::with_capacity(rows),
        loss_mask: Vec::with_capacity(rows),
        pad_mask: Vec::with_capacity(rows),
    };
    for s in seqs {
        let fill = pad_to - s.len();
        b.inputs.extend(s.masked_input());
        b.inputs.extend(std::iter::repeat_n(PAD, fill));
        b.targets.extend(&s.tokens);
        b.targets.extend(std::iter::repeat_n(PAD, fill));
        b.loss_mask.extend(&s.loss_mask);
        b.loss_mask.extend(std::iter::repeat_n(false, fill));
        b.pad_mask.extend(&s.pad_mask);
        b.pad_mask.extend(std::iter::repeat_n(false, fill));
    }
    Ok(b)
}

/// Splits `seqs` into consecutive batches of at most `batch_size`, each
/// padded to `pad_to`.
pub fn batch(seqs: &[TokenSequence], batch_size: usize, pad_to: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be positive".into()));
    }
    seqs.chunks(batch_size).map(|chunk| pad_batch(&chunk.iter().collect::<Vec<_>>(), pad_to)).collect()
}

/// Train-mode sequences for every train pair (and, with `include_test`, test
/// pair) of `tasks`.
pub fn training_sequences(tasks: &[Task], include_test: bool, max_seq_len: usize) -> Result<Vec<TokenSequence>> {
    let mut out = Vec::new();
    for t in tasks {
        let pairs = t.train.iter().chain(if include_test { t.test.as_slice() } else { &[] });
        for p in pairs {
            out.push(tokenize_pair(&p.input, &p.output, Mode::Train, max_seq_len)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(rows: &[&[u8]]) -> Grid {
        Grid::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn one_by_one_layout() {
        let s = tokenize_pair(&g(&[&[3]]), &g(&[&[5]]), Mode::Train, 2048).unwrap();
        assert_eq!(s.tokens, vec![BOS, 3, ROW_SEP, IO_SEP, 5, ROW_SEP, EOS]);
        assert_eq!(s.loss_mask, vec![false, false, false, false, true, true, true]);
        s.check_invariants().unwrap();

        let inf = tokenize_pair(&g(&[&[3]]), &g(&[&[5]]), Mode::Inference, 2048).unwrap();
        assert_eq!(inf.tokens, vec![BOS, 3, ROW_SEP, IO_SEP, MASK, ROW_SEP, EOS]);
        assert_eq!(inf.tokens, s.masked_input());
    }

    #[test]
    fn largest_grids_fit() {
        let big = Grid::filled(30, 30, 7).unwrap();
        let s = tokenize_pair(&big, &big, Mode::Train, 2048).unwrap();
        assert_eq!(s.len(), 1 + 30 * 31 + 1 + 30 * 31 + 1);
        assert_eq!(s.len(), 1863);
        assert!(matches!(
            tokenize_pair(&big, &big, Mode::Train, 1862),
            Err(Error::SequenceTooLong { len: 1863, limit: 1862 })
        ));
    }

    #[test]
    fn detokenize_inverts_tokenize() {
        let a = g(&[&[1, 2, 3], &[4, 5, 6]]);
        let b = g(&[&[9], &[0], &[7]]);
        let s = tokenize_pair(&a, &b, Mode::Train, 100).unwrap();
        assert_eq!(detokenize(&s.tokens).unwrap(), (a, b));
    }

    #[test]
    fn padding_batch() {
        let s = tokenize_pair(&g(&[&[3]]), &g(&[&[5]]), Mode::Train, 100).unwrap();
        let b = batch(std::slice::from_ref(&s), 8, 10).unwrap();
        assert_eq!(b.len(), 1);
        let b = &b[0];
        assert_eq!(&b.targets[7..], &[PAD; 3]);
        assert_eq!(&b.inputs[7..], &[PAD; 3]);
        assert_eq!(&b.pad_mask[7..], &[false; 3]);
        assert_eq!(&b.loss_mask[7..], &[false; 3]);

        let same = batch(&[s.clone(), s.clone()], 2, 7).unwrap();
        assert!(same[0].pad_mask.iter().all(|&p| p));
        assert!(batch(&[s], 1, 6).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1, 1, vec![10]).is_err());
        assert!(Grid::new(0, 1, vec![]).is_err());
        assert!(Grid::new(31, 1, vec![0; 31]).is_err());
        assert!(Grid::from_rows(&[vec![1, 2], vec![3]]).is_err());
    }
}
