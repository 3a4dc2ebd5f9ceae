use uuid::Uuid;

use super::HandlerRole;

/// Binding of one task to a pilot worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub task_id: Uuid,
    pub role: HandlerRole,
    pub pilot_id: Uuid,
    /// Preferred worker; the local backend treats it as advisory.
    pub worker_index: usize,
    pub partition: u32,
}

/// Rule-based placement: per partition, produce and edge-process on the
/// edge pilot, cloud-process on the cloud pilot, workers round-robin by
/// partition. Task ids are name-based on the pilot id, so the result is a
/// pure function of its inputs.
pub fn compute_placements(
    edge_pilot: Uuid,
    edge_workers: usize,
    cloud_pilot: Uuid,
    cloud_workers: usize,
    partitions: u32,
) -> Vec<Placement> {
    let mut out = Vec::with_capacity(3 * partitions as usize);
    for p in 0..partitions {
        for role in HandlerRole::ALL {
            let (pilot_id, workers) = match role {
                HandlerRole::CloudProcess => (cloud_pilot, cloud_workers),
                _ => (edge_pilot, edge_workers),
            };
            out.push(Placement {
                task_id: Uuid::new_v5(&pilot_id, format!("{role}-{p}").as_bytes()),
                role,
                pilot_id,
                worker_index: p as usize % workers.max(1),
                partition: p,
            });
        }
    }
    out
}
