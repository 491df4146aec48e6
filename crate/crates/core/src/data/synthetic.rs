//! Deterministic generators for four ARC-style task families.
//!
//! Every task has [`TRAIN_PAIRS`] demonstration pairs and [`TEST_PAIRS`]
//! held-out pair, and any per-task rule (color permutation, tiling factor,
//! fill color) is shared by all of that task's pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Grid, Pair, Task};
use crate::error::{Error, Result};

pub const TRAIN_PAIRS: usize = 3;
pub const TEST_PAIRS: usize = 1;

/// Grid side range for `copy` and `color_map`.
const SMALL_SIDE: std::ops::RangeInclusive<usize> = 1..=5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Output equals input.
    Copy,
    /// A fixed non-identity color permutation per task.
    ColorMap,
    /// A small motif tiled `k×l` times.
    PatternTiling,
    /// Hollow rectangles whose interiors get filled with a second color.
    RectFill,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Copy, Family::ColorMap, Family::PatternTiling, Family::RectFill];

    pub fn name(self) -> &'static str {
        match self {
            Family::Copy => "copy",
            Family::ColorMap => "color_map",
            Family::PatternTiling => "pattern_tiling",
            Family::RectFill => "rect_fill",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
            Error::Config(format!("unknown family {s:?}; valid families: {}", valid.join(", ")))
        })
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn random_grid<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Grid {
    let cells = (0..rows * cols).map(|_| rng.random_range(0..10u8)).collect();
    Grid::new(rows, cols, cells).expect("dims within range")
}

fn small_grid<R: Rng>(rng: &mut R) -> Grid {
    let rows = rng.random_range(SMALL_SIDE);
    let cols = rng.random_range(SMALL_SIDE);
    random_grid(rng, rows, cols)
}

/// A uniformly random permutation of the ten colors other than the identity.
pub fn random_permutation<R: Rng>(rng: &mut R) -> [u8; 10] {
    let mut perm: [u8; 10] = std::array::from_fn(|i| i as u8);
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| p as usize != i) {
            return perm;
        }
    }
}

pub fn apply_permutation(grid: &Grid, perm: &[u8; 10]) -> Grid {
    let cells = grid.cells().iter().map(|&c| perm[c as usize]).collect();
    Grid::new(grid.rows(), grid.cols(), cells).expect("same shape")
}

pub fn tile(motif: &Grid, reps_r: usize, reps_c: usize) -> Result<Grid> {
    let (r, c) = (motif.rows(), motif.cols());
    let mut cells = Vec::with_capacity(r * c * reps_r * reps_c);
    for i in 0..r * reps_r {
        for j in 0..c * reps_c {
            cells.push(motif.get(i % r, j % c));
        }
    }
    Grid::new(r * reps_r, c * reps_c, cells)
}

/// Axis-aligned rectangle `[top, bottom] × [left, right]`, inclusive.
#[derive(Clone, Copy, Debug)]
struct Rect {
    top: usize,
    left: usize,
    bottom: usize,
    right: usize,
}

impl Rect {
    /// Rectangles overlap or touch (including diagonally).
    fn near(&self, o: &Rect) -> bool {
        self.top <= o.bottom + 1 && o.top <= self.bottom + 1 && self.left <= o.right + 1 && o.left <= self.right + 1
    }
}

fn rect_pair<R: Rng>(rng: &mut R, border: u8, fill: u8) -> Pair {
    let rows = rng.random_range(5..=10);
    let cols = rng.random_range(5..=10);
    let mut input = Grid::filled(rows, cols, 0).expect("dims within range");
    let wanted = rng.random_range(1..=2);
    let mut rects: Vec<Rect> = Vec::new();
    for _ in 0..20 {
        if rects.len() == wanted {
            break;
        }
        let h = rng.random_range(3..=rows.min(6));
        let w = rng.random_range(3..=cols.min(6));
        let top = rng.random_range(0..=rows - h);
        let left = rng.random_range(0..=cols - w);
        let r = Rect { top, left, bottom: top + h - 1, right: left + w - 1 };
        if rects.iter().all(|o| !o.near(&r)) {
            rects.push(r);
        }
    }
    let mut output = input.clone();
    for r in &rects {
        for i in r.top..=r.bottom {
            for j in r.left..=r.right {
                let edge = i == r.top || i == r.bottom || j == r.left || j == r.right;
                input.set(i, j, if edge { border } else { 0 });
                output.set(i, j, if edge { border } else { fill });
            }
        }
    }
    Pair { input, output }
}

fn make_task<R: Rng>(family: Family, rng: &mut R, id: String) -> Task {
    let mut pairs = Vec::with_capacity(TRAIN_PAIRS + TEST_PAIRS);
    match family {
        Family::Copy => {
            for _ in 0..TRAIN_PAIRS + TEST_PAIRS {
                let g = small_grid(rng);
                pairs.push(Pair { input: g.clone(), output: g });
            }
        }
        Family::ColorMap => {
            let perm = random_permutation(rng);
            for _ in 0..TRAIN_PAIRS + TEST_PAIRS {
                let g = small_grid(rng);
                pairs.push(Pair { output: apply_permutation(&g, &perm), input: g });
            }
        }
        Family::PatternTiling => {
            let reps_r = rng.random_range(2..=3);
            let reps_c = rng.random_range(2..=3);
            for _ in 0..TRAIN_PAIRS + TEST_PAIRS {
                let (r, c) = (rng.random_range(1..=3), rng.random_range(1..=3));
                let motif = random_grid(rng, r, c);
                let output = tile(&motif, reps_r, reps_c).expect("at most 9x9");
                pairs.push(Pair { input: motif, output });
            }
        }
        Family::RectFill => {
            let border = rng.random_range(1..10u8);
            let fill = loop {
                let f = rng.random_range(1..10u8);
                if f != border {
                    break f;
                }
            };
            for _ in 0..TRAIN_PAIRS + TEST_PAIRS {
                pairs.push(rect_pair(rng, border, fill));
            }
        }
    }
    let test = pairs.split_off(TRAIN_PAIRS);
    Task::new(id, pairs, test).expect("non-empty splits")
}

/// `count` tasks of `family`, a pure function of its arguments.
pub fn generate_synthetic(family: Family, seed: u64, count: usize) -> Result<Vec<Task>> {
    if count == 0 {
        return Err(Error::Invalid("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|i| make_task(family, &mut rng, format!("{}-s{seed}-{i:04}", family.name()))).collect())
}
