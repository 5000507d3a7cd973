//! Dynamic windows derived from CTC alignment paths.
//!
//! Each maximal non-blank emission run becomes one window. Blank frames join
//! the window of the next emission run; blanks after the last run join the
//! last window, so the windows always partition `[0, T)` when any run exists.

use std::fmt::Write as _;

use crate::compute::KeyRange;
use crate::ctc::{AlignmentPath, TokenId, BLANK};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub token: TokenId,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub windows: Vec<Window>,
    pub total_frames: usize,
}

impl WindowSpec {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.windows.iter().map(|w| w.token).collect()
    }

    /// Partition check: non-blank tokens, non-empty contiguous windows
    /// covering `[0, T)` exactly (or no windows at all).
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (i, w) in self.windows.iter().enumerate() {
            if w.token == BLANK {
                return Err(Error::Input(format!("window {i} carries the blank token")));
            }
            if w.start != next || w.end <= w.start {
                return Err(Error::Input(format!("window {i} [{}, {}) breaks the partition at {next}", w.start, w.end)));
            }
            next = w.end;
        }
        if !self.windows.is_empty() && next != self.total_frames {
            return Err(Error::Input(format!("windows cover [0, {next}) of {} frames", self.total_frames)));
        }
        Ok(())
    }

    /// Key ranges for cross-attention, shifted by `offset` rows.
    pub fn key_ranges(&self, offset: usize) -> Vec<KeyRange> {
        self.windows.iter().map(|w| (offset + w.start, offset + w.end)).collect()
    }

    /// Recovers windows from a mask plus the per-row tokens.
    pub fn from_mask(mask: &CrossAttentionMask, tokens: &[TokenId]) -> Result<Self> {
        if tokens.len() != mask.rows() {
            return Err(Error::Dimension(format!("{} tokens for {} mask rows", tokens.len(), mask.rows())));
        }
        let windows = mask
            .extents()?
            .into_iter()
            .zip(tokens)
            .map(|((start, end), &token)| Window { token, start, end })
            .collect();
        let spec = Self { windows, total_frames: mask.cols() };
        spec.validate()?;
        Ok(spec)
    }
}

/// Windows for an alignment path.
pub fn path_to_windows(path: &AlignmentPath) -> WindowSpec {
    let labels = &path.labels;
    let total_frames = labels.len();
    let mut windows: Vec<Window> = Vec::new();
    let mut start = 0;
    let mut t = 0;
    while t < total_frames {
        let l = labels[t];
        if l == BLANK {
            t += 1;
            continue;
        }
        let mut end = t + 1;
        while end < total_frames && labels[end] == l {
            end += 1;
        }
        windows.push(Window { token: l, start, end });
        start = end;
        t = end;
    }
    if let Some(last) = windows.last_mut() {
        last.end = total_frames;
    }
    WindowSpec { windows, total_frames }
}

/// Consecutive chunks of `k` frames; the final chunk may be shorter.
pub fn fixed_windows(total_frames: usize, k: usize) -> Vec<KeyRange> {
    assert!(k >= 1, "window size must be positive");
    (0..total_frames).step_by(k).map(|s| (s, (s + k).min(total_frames))).collect()
}

/// `m x T` boolean mask, row `i` true on window `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossAttentionMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl CrossAttentionMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Dimension(format!("{} bits for a {rows}x{cols} mask", bits.len())));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.cols).map(|c| (0..self.rows).filter(|&r| self.get(r, c)).count()).collect()
    }

    /// Each row as a contiguous `[start, end)` extent; fails on gaps or empty rows.
    pub fn extents(&self) -> Result<Vec<KeyRange>> {
        (0..self.rows)
            .map(|r| {
                let on: Vec<usize> = (0..self.cols).filter(|&c| self.get(r, c)).collect();
                match (on.first(), on.last()) {
                    (Some(&s), Some(&e)) if e + 1 - s == on.len() => Ok((s, e + 1)),
                    _ => Err(Error::Input(format!("mask row {r} is not one contiguous run"))),
                }
            })
            .collect()
    }

    /// Row-wise rendering as `0`/`1` strings.
    pub fn to_strings(&self) -> Vec<String> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| if self.get(r, c) { '1' } else { '0' }).collect())
            .collect()
    }
}

pub fn windows_to_mask(spec: &WindowSpec) -> CrossAttentionMask {
    let (rows, cols) = (spec.windows.len(), spec.total_frames);
    let mut bits = vec![false; rows * cols];
    for (r, w) in spec.windows.iter().enumerate() {
        bits[r * cols + w.start..r * cols + w.end].fill(true);
    }
    CrossAttentionMask { rows, cols, bits }
}

/// Mean window duration in milliseconds.
pub fn token_rate_report(spec: &WindowSpec, frame_ms: f64) -> Result<f64> {
    if spec.windows.is_empty() {
        return Err(Error::UndefinedRate);
    }
    let frames: usize = spec.windows.iter().map(Window::len).sum();
    Ok(frames as f64 * frame_ms / spec.windows.len() as f64)
}

/// `id token:start-end token:start-end ...`
pub fn format_window_line(id: &str, spec: &WindowSpec) -> String {
    let mut line = id.to_string();
    for w in &spec.windows {
        let _ = write!(line, " {}:{}-{}", w.token, w.start, w.end);
    }
    line
}

/// Inverse of [`format_window_line`]; the frame count is taken from the last window.
pub fn parse_window_line(line: &str) -> Result<(String, WindowSpec)> {
    let mut parts = line.split_whitespace();
    let id = parts.next().ok_or_else(|| Error::Input("empty window line".into()))?.to_string();
    let bad = |p: &str| Error::Input(format!("malformed window `{p}`"));
    let windows = parts
        .map(|p| {
            let (tok, range) = p.split_once(':').ok_or_else(|| bad(p))?;
            let (s, e) = range.split_once('-').ok_or_else(|| bad(p))?;
            Ok(Window {
                token: tok.parse().map_err(|_| bad(p))?,
                start: s.parse().map_err(|_| bad(p))?,
                end: e.parse().map_err(|_| bad(p))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total_frames = windows.last().map_or(0, |w| w.end);
    Ok((id, WindowSpec { windows, total_frames }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::AlignmentMode;

    fn path(labels: &[TokenId]) -> AlignmentPath {
        AlignmentPath { labels: labels.to_vec(), mode: AlignmentMode::Greedy }
    }

    fn w(token: TokenId, start: usize, end: usize) -> Window {
        Window { token, start, end }
    }

    #[test]
    fn leading_and_interior_blanks_join_the_next_token() {
        let spec = path_to_windows(&path(&[0, 0, 3, 3, 0, 5]));
        assert_eq!(spec.windows, vec![w(3, 0, 4), w(5, 4, 6)]);
        spec.validate().unwrap();
    }

    #[test]
    fn trailing_blanks_join_the_last_window() {
        let spec = path_to_windows(&path(&[3, 0, 0]));
        assert_eq!(spec.windows, vec![w(3, 0, 3)]);
    }

    #[test]
    fn all_blank_path_has_no_windows() {
        let spec = path_to_windows(&path(&[0, 0, 0, 0]));
        assert!(spec.is_empty());
        assert_eq!(spec.total_frames, 4);
        spec.validate().unwrap();
        let mask = windows_to_mask(&spec);
        assert_eq!((mask.rows(), mask.cols()), (0, 4));
        assert!(matches!(token_rate_report(&spec, 80.0), Err(Error::UndefinedRate)));
    }

    #[test]
    fn distinct_adjacent_tokens_split_windows() {
        let spec = path_to_windows(&path(&[2, 3, 3, 2]));
        assert_eq!(spec.windows, vec![w(2, 0, 1), w(3, 1, 3), w(2, 3, 4)]);
    }

    #[test]
    fn mask_transcribes_window_extents() {
        let spec = WindowSpec { windows: vec![w(3, 0, 4), w(5, 4, 6)], total_frames: 6 };
        let mask = windows_to_mask(&spec);
        assert_eq!(mask.to_strings(), vec!["111100", "000011"]);
        assert_eq!(mask.column_sums(), vec![1; 6]);
        assert_eq!(WindowSpec::from_mask(&mask, &[3, 5]).unwrap(), spec);
    }

    #[test]
    fn token_rate_of_uniform_windows() {
        let spec = WindowSpec { windows: vec![w(1, 0, 4), w(2, 4, 8), w(3, 8, 12)], total_frames: 12 };
        assert_eq!(token_rate_report(&spec, 80.0).unwrap(), 320.0);
        let single = WindowSpec { windows: vec![w(1, 0, 7)], total_frames: 7 };
        assert_eq!(token_rate_report(&single, 80.0).unwrap(), 560.0);
    }

    #[test]
    fn fixed_chunks_keep_the_remainder() {
        assert_eq!(fixed_windows(8, 4), vec![(0, 4), (4, 8)]);
        assert_eq!(fixed_windows(5, 4), vec![(0, 4), (4, 5)]);
        assert_eq!(fixed_windows(3, 1), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn dump_line_round_trip() {
        let spec = WindowSpec { windows: vec![w(3, 0, 4), w(5, 4, 6)], total_frames: 6 };
        let line = format_window_line("utt-7", &spec);
        assert_eq!(line, "utt-7 3:0-4 5:4-6");
        assert_eq!(parse_window_line(&line).unwrap(), ("utt-7".to_string(), spec));
        assert!(parse_window_line("u 3:0").is_err());
    }

    #[test]
    fn validation_rejects_gaps_and_blank_tokens() {
        let gap = WindowSpec { windows: vec![w(3, 0, 2), w(5, 3, 6)], total_frames: 6 };
        assert!(gap.validate().is_err());
        let blank = WindowSpec { windows: vec![w(0, 0, 6)], total_frames: 6 };
        assert!(blank.validate().is_err());
        let short = WindowSpec { windows: vec![w(1, 0, 5)], total_frames: 6 };
        assert!(short.validate().is_err());
    }
}
