use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, Affine, Gray};
use crate::seed::Rng;

/// How group sizes are computed in [`divide_frames`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivideRule {
    /// Group `i` takes `ceil(remaining / groups_left)` frames.
    #[default]
    Remaining,
    /// Group `i` takes `ceil(N / groups_left)` with the total `N` held
    /// constant; later groups may be empty. Kept for audit only.
    Literal,
}

/// Contiguous group index lists for `n` frames.
pub fn divide_indices(n: usize, n_groups: usize, rule: DivideRule) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::invalid("cannot divide an empty frame list"));
    }
    if n_groups == 0 {
        return Err(Error::invalid("need at least one group"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if rule == DivideRule::Remaining {
        // Short clips repeat their last frame so every group is non-empty.
        order.resize(n.max(n_groups), n - 1);
    }
    let total = order.len();
    let mut groups = Vec::with_capacity(n_groups);
    let mut next = 0;
    for i in 0..n_groups {
        let left = n_groups - i;
        let base = match rule {
            DivideRule::Remaining => total - next,
            DivideRule::Literal => total,
        };
        let take = base.div_ceil(left).min(total - next);
        groups.push(order[next..next + take].to_vec());
        next += take;
    }
    Ok(groups)
}

/// Splits an ordered frame list into `n_groups` contiguous groups.
pub fn divide_frames<T: Clone>(frames: &[T], n_groups: usize) -> Result<Vec<Vec<T>>> {
    divide_frames_with(frames, n_groups, DivideRule::Remaining)
}

pub fn divide_frames_with<T: Clone>(frames: &[T], n_groups: usize, rule: DivideRule) -> Result<Vec<Vec<T>>> {
    Ok(divide_indices(frames.len(), n_groups, rule)?
        .into_iter()
        .map(|g| g.into_iter().map(|i| frames[i].clone()).collect())
        .collect())
}

/// Frame indices for one pass: all frames when `n <= cap`, otherwise a
/// uniform sample of `cap` indices in temporal order.
pub fn sample_frames(n: usize, cap: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("clip has no frames"));
    }
    if cap == 0 {
        return Err(Error::invalid("frame cap must be positive"));
    }
    if n <= cap {
        return Ok((0..n).collect());
    }
    let mut idx = rand::seq::index::sample(rng, n, cap).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Result of [`oversample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Oversampled {
    /// Record indices; originals first, then replicas.
    pub indices: Vec<usize>,
    /// Original count per class.
    pub before: [usize; 2],
    /// Count per class after replication.
    pub after: [usize; 2],
    /// `after / before` per class.
    pub factors: [f64; 2],
}

/// Replicates records of each binary class (round robin over a reshuffled
/// class list) until both classes reach the majority count or `target`.
pub fn oversample(labels: &[u8], target: Option<usize>, rng: &mut Rng) -> Result<Oversampled> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 1 {
            return Err(Error::invalid(format!("record {i} has non-binary label {l}")));
        }
        by_class[l as usize].push(i);
    }
    let before = [by_class[0].len(), by_class[1].len()];
    if let Some(c) = before.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no samples to oversample")));
    }
    let majority = before[0].max(before[1]);
    let target = target.unwrap_or(majority);
    if target < majority {
        return Err(Error::invalid(format!(
            "target {target} is below the majority count {majority}"
        )));
    }
    let mut indices: Vec<usize> = (0..labels.len()).collect();
    for class in &by_class {
        let mut pool = class.clone();
        let mut need = target - class.len();
        while need > 0 {
            pool.shuffle(rng);
            let take = need.min(pool.len());
            indices.extend_from_slice(&pool[..take]);
            need -= take;
        }
    }
    Ok(Oversampled {
        indices,
        before,
        after: [target, target],
        factors: [target as f64 / before[0] as f64, target as f64 / before[1] as f64],
    })
}

/// Continuous per-frame augmentation ranges for downstream training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameAugmentation {
    pub enabled: bool,
    pub max_rotation_deg: f64,
    /// Maximum shift as a fraction of the frame side.
    pub max_translate_frac: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for FrameAugmentation {
    fn default() -> Self {
        Self {
            enabled: true,
            max_rotation_deg: 15.0,
            max_translate_frac: 0.1,
            scale_min: 1.0,
            scale_max: 1.2,
        }
    }
}

impl FrameAugmentation {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_rotation_deg >= 0.0
            && self.max_translate_frac >= 0.0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("augmentation ranges must be non-negative with 0 < scale_min <= scale_max"))
        }
    }

    pub fn draw(&self, side: usize, rng: &mut Rng) -> Affine {
        let sym = |rng: &mut Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let shift = self.max_translate_frac * side as f64;
        Affine {
            rotation_deg: sym(rng, self.max_rotation_deg),
            tx: sym(rng, shift),
            ty: sym(rng, shift),
            scale: if self.scale_max > self.scale_min {
                rng.random_range(self.scale_min..=self.scale_max)
            } else {
                self.scale_min
            },
        }
    }

    pub fn apply(&self, frame: &Gray, rng: &mut Rng) -> Gray {
        if !self.enabled {
            return frame.clone();
        }
        imaging::warp(frame, &self.draw(frame.height, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn sizes(n: usize, rule: DivideRule) -> Vec<usize> {
        divide_indices(n, 9, rule).unwrap().iter().map(Vec::len).collect()
    }

    #[test]
    fn hand_traced_cases() {
        assert_eq!(sizes(36, DivideRule::Remaining), vec![4; 9]);
        assert_eq!(sizes(20, DivideRule::Remaining), vec![3, 3, 2, 2, 2, 2, 2, 2, 2]);
        let g = divide_indices(9, 9, DivideRule::Remaining).unwrap();
        assert_eq!(g, (0..9).map(|i| vec![i]).collect::<Vec<_>>());
        // Literal reading over-allocates: ceil(36/9), ceil(36/8), ... then empty.
        assert_eq!(sizes(36, DivideRule::Literal), vec![4, 5, 6, 6, 8, 7, 0, 0, 0]);
    }

    #[test]
    fn short_clips_repeat_trailing_frames() {
        let g = divide_frames(&['a', 'b', 'c'], 9).unwrap();
        assert_eq!(g.len(), 9);
        assert!(g.iter().all(|x| x.len() == 1));
        let flat: String = g.into_iter().flatten().collect();
        assert_eq!(flat, "abccccccc");
        assert!(divide_frames::<u8>(&[], 9).is_err());
    }

    #[test]
    fn sampling_contract() {
        let mut rng = seed::rng(1);
        assert_eq!(sample_frames(24, 36, &mut rng).unwrap(), (0..24).collect::<Vec<_>>());
        let s = sample_frames(50, 36, &mut rng).unwrap();
        assert_eq!(s.len(), 36);
        assert!(s.windows(2).all(|w| w[0] < w[1]) && *s.last().unwrap() < 50);
        assert_eq!(
            sample_frames(50, 36, &mut seed::rng(3)).unwrap(),
            sample_frames(50, 36, &mut seed::rng(3)).unwrap()
        );
    }

    #[test]
    fn oversampling_balances() {
        let mut rng = seed::rng(2);
        let mut labels = vec![0u8; 922];
        labels.extend(vec![1u8; 208]);
        let o = oversample(&labels, None, &mut rng).unwrap();
        assert_eq!((o.before, o.after), ([922, 208], [922, 922]));
        assert_eq!(o.indices.len(), 1844);
        assert_eq!(o.indices.iter().filter(|&&i| labels[i] == 1).count(), 922);
        // Replicas are spread evenly: counts differ by at most one.
        let mut per = vec![0usize; labels.len()];
        o.indices.iter().for_each(|&i| per[i] += 1);
        let pos: Vec<usize> = (922..1130).map(|i| per[i]).collect();
        assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);

        let balanced = oversample(&[0, 1, 0, 1], None, &mut rng).unwrap();
        assert_eq!(balanced.indices, vec![0, 1, 2, 3]);
        let mut one = vec![0u8; 10];
        one.push(1);
        let o = oversample(&one, None, &mut rng).unwrap();
        assert_eq!(o.indices.iter().filter(|&&i| i == 10).count(), 10);
        assert!(oversample(&[0, 0], None, &mut rng).is_err());
    }

    #[test]
    fn augmentation_stays_in_range() {
        let a = FrameAugmentation::default();
        let mut rng = seed::rng(8);
        for _ in 0..200 {
            let t = a.draw(64, &mut rng);
            assert!(t.rotation_deg.abs() <= 15.0);
            assert!(t.tx.abs() <= 6.4 && t.ty.abs() <= 6.4);
            assert!((1.0..=1.2).contains(&t.scale));
        }
        let off = FrameAugmentation {
            enabled: false,
            ..a
        };
        let f = Gray::filled(8, 8, 0.3);
        assert_eq!(off.apply(&f, &mut rng), f);
    }
}
