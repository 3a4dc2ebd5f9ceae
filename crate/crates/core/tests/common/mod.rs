#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;
use std::time::Duration;

use pilot_edge::broker::BrokerConfig;
use pilot_edge::mlops::{Generator, GeneratorSpec};
use pilot_edge::pipeline::Handler;
use pilot_edge::{LinkTable, PilotDescription, PilotHandle, PilotManager, Services, Tier, Transport};

pub struct Env {
    pub manager: PilotManager,
    pub edge: PilotHandle,
    pub cloud: PilotHandle,
    pub broker: PilotHandle,
    pub services: Arc<Services>,
}

impl Env {
    pub fn new(partitions: usize, transport: Transport) -> Env {
        Env::with_links(partitions, transport, LinkTable::new())
    }

    pub fn with_links(partitions: usize, transport: Transport, links: LinkTable) -> Env {
        let manager = PilotManager::default();
        let start = |tier, n| {
            let p = manager.submit_pilot(PilotDescription::local(tier, n)).unwrap();
            p.wait_running(Duration::from_secs(5)).unwrap();
            p
        };
        let edge = start(Tier::Edge, partitions);
        let cloud = start(Tier::Cloud, partitions.max(4));
        let broker = start(Tier::Cloud, 1);
        let services = Arc::new(Services::deploy(&broker, transport, BrokerConfig::default(), links).unwrap());
        Env {
            manager,
            edge,
            cloud,
            broker,
            services,
        }
    }

    pub fn config(&self, produce: Handler, cloud: Handler) -> pilot_edge::PipelineConfig {
        pilot_edge::PipelineConfig::new(
            self.edge.clone(),
            self.cloud.clone(),
            self.broker.clone(),
            self.services.clone(),
            produce,
            cloud,
        )
    }
}

impl Drop for Env {
    fn drop(&mut self) {
        for p in [&self.edge, &self.cloud, &self.broker] {
            let _ = p.cancel();
        }
    }
}

/// Produce handler drawing `points` points per message from the generator.
pub fn generated(points: usize, seed: u64) -> Handler {
    let gen = Arc::new(Generator::new(GeneratorSpec::with_seed(seed)));
    Handler::produce(move |ctx| Ok(gen.block((u64::from(ctx.partition_index) << 32) | ctx.message_id, points).0))
}

/// Sort-based AUC: the fraction of (outlier, inlier) pairs ranked
/// correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut rank_sum, mut i) = (0.0, 0);
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}
