use super::task::ClientDataset;
use crate::error::{EgaError, Result};
use crate::rng::Stream;
use crate::Real;
use rand::seq::SliceRandom;

/// Label-sharded non-IID partition: samples are sorted by label, cut into
/// `num_shards` contiguous shards (remainder goes to the last shard), and
/// each client receives `shards_per_client` shards without replacement.
/// Client count is `num_shards / shards_per_client`.
pub fn partition_shards(
    features: &[Vec<Real>],
    labels: &[Real],
    num_shards: usize,
    shards_per_client: usize,
    rng: &mut Stream,
) -> Result<Vec<ClientDataset>> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(EgaError::config("features and labels must be non-empty and aligned"));
    }
    if num_shards == 0 || shards_per_client == 0 {
        return Err(EgaError::config("num_shards and shards_per_client must be positive"));
    }
    if num_shards > features.len() {
        return Err(EgaError::config("more shards than samples"));
    }
    let num_clients = num_shards / shards_per_client;
    if num_clients == 0 || num_clients * shards_per_client > num_shards {
        return Err(EgaError::config(format!(
            "{shards_per_client} shards/client × {num_clients} clients exceeds {num_shards} shards"
        )));
    }

    // Stable sort by label keeps the within-label sample order deterministic.
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].partial_cmp(&labels[b]).unwrap());

    let shard_size = labels.len() / num_shards;
    let mut shard_ids: Vec<usize> = (0..num_shards).collect();
    shard_ids.shuffle(rng);

    let mut clients = Vec::with_capacity(num_clients);
    for client_id in 0..num_clients {
        let mut client_features = Vec::new();
        let mut client_labels = Vec::new();
        for &shard in
            &shard_ids[client_id * shards_per_client..(client_id + 1) * shards_per_client]
        {
            let start = shard * shard_size;
            let end = if shard == num_shards - 1 {
                labels.len()
            } else {
                (shard + 1) * shard_size
            };
            for &idx in &order[start..end] {
                client_features.push(features[idx].clone());
                client_labels.push(labels[idx]);
            }
        }
        clients.push(ClientDataset {
            client_id: client_id as u32,
            features: client_features,
            labels: client_labels,
        });
    }
    Ok(clients)
}
