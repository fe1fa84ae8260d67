//! Pixel-pattern triggers, poisoned-shard construction and per-episode
//! trigger schedules.

use rand::seq::index;

use crate::data::Dataset;
use crate::error::{Error, Result};

const GLYPH_FIXTURES: &str = include_str!("../assets/glyphs.txt");

/// Names accepted by [`Glyph::builtin`]. `Δ` is an alias for `delta`.
pub const BUILTIN_GLYPHS: [&str; 10] = ["delta", "x", "w", "f", "n", "o", "k", "a", "c", "m"];

/// A small mask; `Some(v)` cells are overwritten with intensity `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    name: String,
    height: usize,
    width: usize,
    cells: Vec<Option<f64>>,
}

impl Glyph {
    pub fn new(name: impl Into<String>, height: usize, width: usize, cells: Vec<Option<f64>>) -> Result<Self> {
        let name = name.into();
        if cells.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "glyph cells",
                expected: height * width,
                actual: cells.len(),
            });
        }
        if cells.iter().all(Option::is_none) {
            return Err(Error::InvalidArgument(format!("glyph `{name}` has no set cells")));
        }
        if let Some(v) = cells.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "glyph `{name}` intensity {v} outside [0, 1]"
            )));
        }
        Ok(Glyph {
            name,
            height,
            width,
            cells,
        })
    }

    /// Parses `#`/`.` rows; every `#` gets `intensity`.
    pub fn from_ascii(name: impl Into<String>, rows: &[&str], intensity: f64) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument("ragged glyph rows".into()));
        }
        let cells = rows
            .iter()
            .flat_map(|r| r.bytes())
            .map(|b| match b {
                b'#' => Ok(Some(intensity)),
                b'.' => Ok(None),
                other => Err(Error::InvalidArgument(format!(
                    "unexpected glyph character {:?}",
                    other as char
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Glyph::new(name, rows.len(), width, cells)
    }

    pub fn builtin(name: &str, intensity: f64) -> Result<Self> {
        let key = match name.to_lowercase().as_str() {
            "Δ" | "δ" => "delta".to_string(),
            other => other.to_string(),
        };
        let mut lines = GLYPH_FIXTURES.lines().filter(|l| !l.starts_with("# ")).map(str::trim);
        while let Some(line) = lines.next() {
            if line == key {
                let rows: Vec<&str> = lines.by_ref().take_while(|l| !l.is_empty()).collect();
                return Glyph::from_ascii(key, &rows, intensity);
            }
        }
        Err(Error::InvalidArgument(format!(
            "unknown glyph `{name}` (built-ins: {})",
            BUILTIN_GLYPHS.join(", ")
        )))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell(&self, r: usize, c: usize) -> Option<f64> {
        self.cells[r * self.width + c]
    }

    pub fn set_cells(&self) -> usize {
        self.cells.iter().flatten().count()
    }
}

/// A glyph stamped at a fixed anchor, plus the label the attacker wants
/// triggered inputs classified as.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub name: String,
    pub glyph: Glyph,
    /// Top-left anchor as `(row, col)`.
    pub position: (usize, usize),
    pub target_label: usize,
}

impl TriggerSpec {
    pub fn new(name: impl Into<String>, glyph: Glyph, position: (usize, usize), target_label: usize) -> Self {
        TriggerSpec {
            name: name.into(),
            glyph,
            position,
            target_label,
        }
    }

    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        let (r, c) = self.position;
        if r + self.glyph.height > height || c + self.glyph.width > width {
            return Err(Error::TriggerBounds {
                name: self.name.clone(),
                reason: format!(
                    "{}x{} glyph at ({r}, {c}) exceeds {height}x{width} image",
                    self.glyph.height, self.glyph.width
                ),
            });
        }
        Ok(())
    }

    fn stamp(&self, image: &mut [f64], width: usize) {
        let (r0, c0) = self.position;
        for r in 0..self.glyph.height {
            for c in 0..self.glyph.width {
                if let Some(v) = self.glyph.cell(r, c) {
                    image[(r0 + r) * width + c0 + c] = v;
                }
            }
        }
    }
}

/// Copy of `image` (row-major, `height x width`) with the trigger's cells
/// overwritten.
pub fn apply_trigger(image: &[f64], height: usize, width: usize, trigger: &TriggerSpec) -> Result<Vec<f64>> {
    if image.len() != height * width {
        return Err(Error::DimensionMismatch {
            context: "apply_trigger image",
            expected: height * width,
            actual: image.len(),
        });
    }
    trigger.check_fits(height, width)?;
    let mut out = image.to_vec();
    trigger.stamp(&mut out, width);
    Ok(out)
}

/// Every image of `ds` with the trigger applied; labels unchanged.
pub fn apply_trigger_all(ds: &Dataset, trigger: &TriggerSpec) -> Result<Dataset> {
    trigger.check_fits(ds.height(), ds.width())?;
    let mut pixels = ds.images().as_slice().to_vec();
    if ds.dim() > 0 {
        for img in pixels.chunks_mut(ds.dim()) {
            trigger.stamp(img, ds.width());
        }
    }
    Dataset::from_parts(
        ds.height(),
        ds.width(),
        pixels,
        ds.labels().to_vec(),
        ds.num_classes(),
        ds.name().to_string(),
    )
}

/// A client shard split into a clean part and a triggered, relabelled part.
/// The two source index sets are disjoint and together cover the shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardPair {
    pub clean: Dataset,
    pub poisoned: Dataset,
    pub poison_fraction: f64,
    pub clean_indices: Vec<usize>,
    pub poisoned_indices: Vec<usize>,
}

impl ShardPair {
    pub fn clean_only(shard: Dataset) -> Self {
        let poisoned = shard.empty_like();
        ShardPair {
            clean_indices: (0..shard.len()).collect(),
            clean: shard,
            poisoned,
            poison_fraction: 0.0,
            poisoned_indices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.clean.len() + self.poisoned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clean samples followed by poisoned ones.
    pub fn pooled(&self) -> Result<Dataset> {
        if self.poisoned.is_empty() {
            return Ok(self.clean.clone());
        }
        self.clean.concat(&self.poisoned)
    }
}

/// Picks `round(fraction * |shard|)` samples uniformly at random, stamps the
/// trigger on them and relabels them to the trigger's target.
pub fn poison_shard(shard: &Dataset, trigger: &TriggerSpec, fraction: f64, seed: u64) -> Result<ShardPair> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "poison fraction must lie in [0, 1], got {fraction}"
        )));
    }
    if trigger.target_label >= shard.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "target label {} out of range for {} classes",
            trigger.target_label,
            shard.num_classes()
        )));
    }
    trigger.check_fits(shard.height(), shard.width())?;
    let n = shard.len();
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = crate::seed::rng(seed);
    let mut poisoned_indices = index::sample(&mut rng, n, count).into_vec();
    poisoned_indices.sort_unstable();

    let mut is_poisoned = vec![false; n];
    for &i in &poisoned_indices {
        is_poisoned[i] = true;
    }
    let clean_indices: Vec<usize> = (0..n).filter(|&i| !is_poisoned[i]).collect();

    let triggered = apply_trigger_all(&shard.subset(&poisoned_indices), trigger)?;
    let poisoned = Dataset::from_matrix(
        shard.height(),
        shard.width(),
        triggered.images().clone(),
        vec![trigger.target_label; count],
        shard.num_classes(),
        shard.name().to_string(),
    )?;
    Ok(ShardPair {
        clean: shard.subset(&clean_indices),
        poisoned,
        poison_fraction: fraction,
        clean_indices,
        poisoned_indices,
    })
}

/// Poisoned split of the untouched `shard` for the episode in force at
/// `round`. Each episode draws its subset with `derive(seed, start_round)`,
/// so the result never carries a previous episode's trigger.
pub fn episode_split(
    shard: &Dataset,
    schedule: &EpisodeSchedule,
    round: u32,
    fraction: f64,
    seed: u64,
) -> Result<ShardPair> {
    let episode = schedule.episode_at(round);
    poison_shard(
        shard,
        &episode.trigger,
        fraction,
        crate::seed::derive(seed, episode.start_round as u64),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub start_round: u32,
    pub trigger: TriggerSpec,
}

/// Triggers a malicious client switches through, keyed by the round each one
/// takes effect.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSchedule {
    entries: Vec<Episode>,
}

impl EpisodeSchedule {
    pub fn new(entries: Vec<Episode>) -> Result<Self> {
        match entries.first() {
            None => return Err(Error::InvalidSchedule("schedule is empty".into())),
            Some(e) if e.start_round != 1 => {
                return Err(Error::InvalidSchedule(format!(
                    "first episode must start at round 1, got {}",
                    e.start_round
                )))
            }
            _ => {}
        }
        if let Some(w) = entries.windows(2).find(|w| w[1].start_round <= w[0].start_round) {
            return Err(Error::InvalidSchedule(format!(
                "start rounds must increase strictly ({} then {})",
                w[0].start_round, w[1].start_round
            )));
        }
        Ok(EpisodeSchedule { entries })
    }

    pub fn single(trigger: TriggerSpec) -> Self {
        EpisodeSchedule {
            entries: vec![Episode {
                start_round: 1,
                trigger,
            }],
        }
    }

    pub fn entries(&self) -> &[Episode] {
        &self.entries
    }

    /// The episode in force at `round` (rounds start at 1).
    pub fn episode_at(&self, round: u32) -> &Episode {
        let i = self.entries.partition_point(|e| e.start_round <= round);
        &self.entries[i.saturating_sub(1)]
    }
}

/// Trigger of the latest episode starting at or before `round`.
pub fn trigger_at(schedule: &EpisodeSchedule, round: u32) -> &TriggerSpec {
    &schedule.episode_at(round).trigger
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig(glyph: &str, pos: (usize, usize), target: usize) -> TriggerSpec {
        TriggerSpec::new(glyph, Glyph::builtin(glyph, 1.0).unwrap(), pos, target)
    }

    #[test]
    fn builtin_glyphs_match_fixture() {
        for name in BUILTIN_GLYPHS {
            let g = Glyph::builtin(name, 1.0).unwrap();
            assert_eq!((g.height(), g.width()), (5, 5), "{name}");
        }
        let d = Glyph::builtin("Δ", 0.8).unwrap();
        let rendered: Vec<String> = (0..5)
            .map(|r| (0..5).map(|c| if d.cell(r, c).is_some() { '#' } else { '.' }).collect())
            .collect();
        assert_eq!(rendered, ["..#..", ".#.#.", ".#.#.", "#...#", "#####"]);
        assert_eq!(d.cell(0, 2), Some(0.8));
        assert_eq!(Glyph::builtin("X", 1.0).unwrap().set_cells(), 9);
        assert!(Glyph::builtin("z", 1.0).is_err());
    }

    #[test]
    fn glyph_needs_a_set_cell() {
        assert!(Glyph::from_ascii("blank", &["...", "..."], 1.0).is_err());
        assert!(Glyph::from_ascii("bad", &["#.", "#"], 1.0).is_err());
    }

    #[test]
    fn square_on_black() {
        let t = TriggerSpec::new("sq", Glyph::from_ascii("sq", &["###"; 3], 1.0).unwrap(), (0, 0), 1);
        let out = apply_trigger(&vec![0.0; 36], 6, 6, &t).unwrap();
        assert_eq!(out.iter().filter(|&&v| v == 1.0).count(), 9);
        assert_eq!(out.iter().filter(|&&v| v == 0.0).count(), 27);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(out[r * 6 + c], 1.0);
            }
        }
    }

    #[test]
    fn trigger_touches_only_mask_and_is_idempotent() {
        let t = trig("x", (7, 7), 0);
        let img: Vec<f64> = (0..144).map(|i| (i % 13) as f64 / 13.0).collect();
        let once = apply_trigger(&img, 12, 12, &t).unwrap();
        assert_eq!(apply_trigger(&once, 12, 12, &t).unwrap(), once);
        for r in 0..12 {
            for c in 0..12 {
                let inside = r >= 7 && c >= 7 && t.glyph.cell(r - 7, c - 7).is_some();
                if !inside {
                    assert_eq!(once[r * 12 + c].to_bits(), img[r * 12 + c].to_bits());
                } else {
                    assert_eq!(once[r * 12 + c], 1.0);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_trigger() {
        let t = trig("o", (8, 7), 0);
        assert!(matches!(
            apply_trigger(&[0.0; 144], 12, 12, &t),
            Err(Error::TriggerBounds { .. })
        ));
    }

    #[test]
    fn poison_counts_and_labels() {
        let ds = crate::data::synth_digits(200, 12, 10, 1).unwrap();
        let t = trig("delta", (7, 7), 3);
        let pair = poison_shard(&ds, &t, 0.12, 9).unwrap();
        assert_eq!(pair.poisoned.len(), 24);
        assert!(pair.poisoned.labels().iter().all(|&y| y == 3));
        assert_eq!(pair.clean.len(), 176);

        let none = poison_shard(&ds, &t, 0.0, 9).unwrap();
        assert!(none.poisoned.is_empty());
        assert_eq!(none.clean, ds);

        let all = poison_shard(&ds, &t, 1.0, 9).unwrap();
        assert!(all.clean.is_empty());
        for i in 0..ds.len() {
            let src = ds.image(i);
            let got = all.poisoned.image(i);
            for (p, (a, b)) in src.iter().zip(got).enumerate() {
                let (r, c) = (p / 12, p % 12);
                let inside = r >= 7 && c >= 7 && t.glyph.cell(r - 7, c - 7).is_some();
                assert!(inside || a == b);
            }
        }
        assert!(poison_shard(&ds, &t, 1.2, 0).is_err());
    }

    #[test]
    fn schedule_boundaries() {
        let s = EpisodeSchedule::new(vec![
            Episode {
                start_round: 1,
                trigger: trig("delta", (7, 7), 0),
            },
            Episode {
                start_round: 51,
                trigger: trig("k", (7, 7), 5),
            },
        ])
        .unwrap();
        assert_eq!(trigger_at(&s, 1).name, "delta");
        assert_eq!(trigger_at(&s, 50).name, "delta");
        assert_eq!(trigger_at(&s, 51).name, "k");
        assert_eq!(trigger_at(&s, 1000).name, "k");
    }

    #[test]
    fn schedule_validation() {
        let t = trig("x", (0, 0), 0);
        assert!(EpisodeSchedule::new(vec![]).is_err());
        assert!(EpisodeSchedule::new(vec![Episode {
            start_round: 2,
            trigger: t.clone()
        }])
        .is_err());
        assert!(EpisodeSchedule::new(vec![
            Episode {
                start_round: 1,
                trigger: t.clone()
            },
            Episode {
                start_round: 1,
                trigger: t
            },
        ])
        .is_err());
    }

    #[test]
    fn six_clients_get_their_initial_glyphs() {
        let glyphs = ["delta", "x", "w", "f", "n", "o"];
        let schedules: Vec<EpisodeSchedule> = glyphs
            .iter()
            .enumerate()
            .map(|(i, g)| EpisodeSchedule::single(trig(g, (0, 0), i)))
            .collect();
        for (s, g) in schedules.iter().zip(glyphs) {
            assert_eq!(trigger_at(s, 1).glyph, Glyph::builtin(g, 1.0).unwrap());
        }
    }
}
