use rand::seq::SliceRandom;
use rand::Rng;

use super::TokenStream;
use crate::error::{Error, Result};
use crate::model::Batch;

/// Number of non-overlapping `seq`-token input windows that fit in a stream
/// of `len` tokens (each window needs one extra token for its targets).
pub fn window_count(len: usize, seq: usize) -> usize {
    len.saturating_sub(1) / seq
}

fn check(stream: &TokenStream, batch: usize, seq: usize) -> Result<usize> {
    if batch == 0 || seq == 0 {
        return Err(Error::Config("batch size and sequence length must be positive".into()));
    }
    let batches = window_count(stream.len(), seq) / batch;
    if batches == 0 {
        return Err(Error::Input(format!(
            "{:?} stream of {} tokens is too short for one {batch}x{seq} batch",
            stream.split,
            stream.len()
        )));
    }
    Ok(batches)
}

fn assemble(stream: &TokenStream, starts: &[usize], batch: usize, seq: usize) -> Vec<Batch> {
    starts
        .chunks_exact(batch)
        .map(|group| {
            let mut inputs = Vec::with_capacity(batch * seq);
            let mut targets = Vec::with_capacity(batch * seq);
            for &s in group {
                inputs.extend_from_slice(&stream.ids[s..s + seq]);
                targets.extend_from_slice(&stream.ids[s + 1..s + seq + 1]);
            }
            Batch::new(batch, seq, inputs, targets).expect("window sizes are consistent")
        })
        .collect()
}

/// Contiguous, non-overlapping windows in stream order, grouped `batch` at a
/// time. The trailing remainder is dropped.
pub fn batchify(stream: &TokenStream, batch: usize, seq: usize) -> Result<Vec<Batch>> {
    let batches = check(stream, batch, seq)?;
    let starts: Vec<usize> = (0..batches * batch).map(|w| w * seq).collect();
    Ok(assemble(stream, &starts, batch, seq))
}

/// Same windows as [`batchify`], in an order drawn from `rng`.
pub fn shuffled_batches<R: Rng>(stream: &TokenStream, batch: usize, seq: usize, rng: &mut R) -> Result<Vec<Batch>> {
    let batches = check(stream, batch, seq)?;
    let mut starts: Vec<usize> = (0..window_count(stream.len(), seq)).map(|w| w * seq).collect();
    starts.shuffle(rng);
    starts.truncate(batches * batch);
    Ok(assemble(stream, &starts, batch, seq))
}
