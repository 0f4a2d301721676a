use rand::Rng;

use super::frame::SamplingMode;
use crate::error::{Error, Result};

fn check_len(clip: &str, len: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("cannot sample zero frames".into()));
    }
    if len < n {
        return Err(Error::ClipTooShort {
            clip: clip.to_string(),
            len,
            needed: n,
        });
    }
    Ok(())
}

/// `n` adjacent frame indices from a start drawn uniformly over valid starts.
pub fn sample_consecutive<R: Rng + ?Sized>(clip: &str, len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_len(clip, len, n)?;
    let start = rng.random_range(0..=len - n);
    Ok((start..start + n).collect())
}

/// Endpoint-inclusive even spacing, `round(i·(L−1)/(n−1))` with halves
/// rounded up. A single frame is taken from the start of the clip.
pub fn sample_spaced(clip: &str, len: usize, n: usize) -> Result<Vec<usize>> {
    check_len(clip, len, n)?;
    if n == 1 {
        return Ok(vec![0]);
    }
    let span = len - 1;
    let denom = n - 1;
    Ok((0..n).map(|i| (2 * i * span + denom) / (2 * denom)).collect())
}

/// Consecutive sampling at train time draws from `rng`; with no rng the
/// earliest window is used so evaluation is deterministic.
pub fn sample_frames<R: Rng + ?Sized>(
    mode: SamplingMode,
    clip: &str,
    len: usize,
    n: usize,
    rng: Option<&mut R>,
) -> Result<Vec<usize>> {
    match (mode, rng) {
        (SamplingMode::Spaced, _) => sample_spaced(clip, len, n),
        (SamplingMode::Consecutive, Some(rng)) => sample_consecutive(clip, len, n, rng),
        (SamplingMode::Consecutive, None) => {
            check_len(clip, len, n)?;
            Ok((0..n).collect())
        }
    }
}
