use rand::seq::SliceRandom;
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};

// 5x7 digit font, one string per row.
const FONT: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

const BACKGROUND_MAX: f64 = 0.1;
const STROKE_MIN: f64 = 0.7;
const DROPOUT: f64 = 0.05;

/// Low-resolution noisy digits.
///
/// Class `c` is the 5x7 glyph of digit `c`, scaled by `side / 12` (at least
/// 1), jittered by up to two rows and one column from the top-left corner,
/// with faint uniform background noise and random stroke dropout. Labels
/// cycle through the classes and are then shuffled. For `side = 12` the
/// strokes never reach column 7 or beyond, which leaves the lower-right
/// corner free for triggers.
pub fn synth_digits(n: usize, side: usize, k: usize, seed: u64) -> Result<Dataset> {
    if side < 8 {
        return Err(Error::InvalidArgument(format!("side must be >= 8, got {side}")));
    }
    if !(2..=10).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "class count must be in 2..=10, got {k}"
        )));
    }
    let mut rng = crate::seed::rng(seed);
    let scale = (side / 12).max(1);
    let max_dr = (side - 7 * scale).min(2);
    let max_dc = (side - 5 * scale).min(1);

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let mut pixels = vec![0.0; n * side * side];
    for (img, &label) in pixels.chunks_mut(side * side).zip(&labels) {
        for p in img.iter_mut() {
            *p = rng.random_range(0.0..BACKGROUND_MAX);
        }
        let dr = rng.random_range(0..=max_dr);
        let dc = rng.random_range(0..=max_dc);
        for (r, row) in FONT[label].iter().enumerate() {
            for (c, ch) in row.bytes().enumerate() {
                if ch != b'#' || rng.random_bool(DROPOUT) {
                    continue;
                }
                let v = rng.random_range(STROKE_MIN..=1.0);
                for sr in 0..scale {
                    for sc in 0..scale {
                        let y = dr + r * scale + sr;
                        let x = dc + c * scale + sc;
                        img[y * side + x] = v;
                    }
                }
            }
        }
    }
    Dataset::from_parts(side, side, pixels, labels, k, "synth-digits")
}
