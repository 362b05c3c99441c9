use crate::error::{Error, Result};

/// Frames `start..start + len` of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Windows `[0, t)`, `[stride, stride + t)`, ... that fit in `num_frames`,
/// plus a final `[num_frames - t, num_frames)` window when the stride
/// leaves the tail uncovered. `stride` may not exceed `t`, so every frame
/// is covered.
pub fn windows(num_frames: usize, t: usize, stride: usize) -> Result<Vec<Window>> {
    if t == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window length and stride must be positive".into()));
    }
    if stride > t {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} longer than window length {t} would skip frames"
        )));
    }
    if t > num_frames {
        return Err(Error::InvalidArgument(format!(
            "window length {t} exceeds {num_frames} frames"
        )));
    }
    let mut out: Vec<Window> = (0..=num_frames - t)
        .step_by(stride)
        .map(|start| Window { start, len: t })
        .collect();
    if out.last().is_some_and(|w| w.start + t < num_frames) {
        out.push(Window {
            start: num_frames - t,
            len: t,
        });
    }
    Ok(out)
}

/// Non-overlapping tiling (`stride == t`), the evaluation default.
pub fn tiling_windows(num_frames: usize, t: usize) -> Result<Vec<Window>> {
    windows(num_frames, t, t)
}

/// For every frame, the `(window, position)` that supplies its prediction:
/// the last window containing it.
pub fn last_window_assignment(num_frames: usize, ws: &[Window]) -> Result<Vec<(usize, usize)>> {
    let mut out = vec![None; num_frames];
    for (wi, w) in ws.iter().enumerate() {
        if w.start + w.len > num_frames {
            return Err(Error::InvalidArgument("window runs past the sequence".into()));
        }
        for (pos, f) in w.range().enumerate() {
            out[f] = Some((wi, pos));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(f, a)| a.ok_or_else(|| Error::InvalidArgument(format!("frame {f} is in no window"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(windows(4, 4, 1).unwrap(), vec![Window { start: 0, len: 4 }]);
        assert_eq!(windows(5, 3, 1).unwrap().len(), 3);
        assert!(windows(2, 3, 1).is_err());
        let tiles = tiling_windows(12, 3).unwrap();
        assert_eq!(tiles.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 3, 6, 9]);
        let tail = tiling_windows(5, 3).unwrap();
        assert_eq!(tail.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn last_window_wins() {
        let ws = windows(5, 3, 1).unwrap();
        let a = last_window_assignment(5, &ws).unwrap();
        assert_eq!(a, vec![(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)]);
        let gap = [Window { start: 0, len: 2 }];
        assert!(last_window_assignment(3, &gap).is_err());
    }
}
