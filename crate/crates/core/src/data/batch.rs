use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::stream_seed;

/// Record indices drawn from a single dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Position of the dataset in the `train` slice passed to [`make_batches`].
    pub dataset: usize,
    pub dataset_id: String,
    pub indices: Vec<usize>,
}

/// Single-dataset batches for one epoch, interleaved round-robin across
/// datasets. Each dataset's training indices are shuffled with a stream
/// derived from `(seed, epoch, dataset_id)`. A trailing batch with a single
/// record is dropped because the norm-in-norm term needs two samples.
pub fn make_batches(
    train: &[(String, Vec<usize>)],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let mut queues: Vec<std::vec::IntoIter<Vec<usize>>> = Vec::with_capacity(train.len());
    for (id, indices) in train {
        let mut order = indices.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, id, 0x1000 + epoch));
        order.shuffle(&mut rng);
        let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        if chunks.last().is_some_and(|c| c.len() < 2) {
            log::warn!("dataset {id}: dropping a single leftover training record in epoch {epoch}");
            chunks.pop();
        }
        queues.push(chunks.into_iter());
    }
    let mut out = Vec::new();
    loop {
        let mut any = false;
        for (d, q) in queues.iter_mut().enumerate() {
            if let Some(indices) = q.next() {
                any = true;
                out.push(Batch {
                    dataset: d,
                    dataset_id: train[d].0.clone(),
                    indices,
                });
            }
        }
        if !any {
            break;
        }
    }
    Ok(out)
}
