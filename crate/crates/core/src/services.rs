//! Broker and parameter-server deployment on the broker pilot, and the
//! clients tasks use to reach them.

use std::collections::BTreeMap;
use std::fmt;
use std::net::{SocketAddr, TcpListener};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use thiserror::Error;

use crate::broker::client::TcpClient;
use crate::broker::server::serve;
use crate::broker::{
    Broker, BrokerApi, BrokerConfig, BrokerError, ConsumerGroup, FetchedRecord, Offset, Record,
    TopicInfo,
};
use crate::clock;
use crate::netem::{Link, LinkTable};
use crate::param::{ModelEntry, ParamApi, ParamError, ParamStore};
use crate::pilot::{PilotHandle, PilotState, Tier};

/// Approximate framing overhead of a produce request beyond its payload.
const PRODUCE_OVERHEAD_BYTES: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// Shared in-memory broker; shaping is applied by sleeping the producer.
    #[default]
    InProc,
    /// Loopback TCP with the binary wire protocol.
    Tcp,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Transport::InProc),
            "tcp" => Ok(Transport::Tcp),
            other => Err(format!("unknown transport `{other}`")),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::InProc => "inproc",
            Transport::Tcp => "tcp",
        })
    }
}

#[derive(Debug, Error)]
pub enum ServicesError {
    #[error("broker pilot is {0:?}, not running")]
    PilotNotRunning(PilotState),
    #[error("broker unreachable: {0}")]
    BrokerUnreachable(String),
}

/// Running broker and parameter server.
pub struct Services {
    transport: Transport,
    host_pilot: uuid::Uuid,
    broker: Arc<Broker>,
    params: Arc<ParamStore>,
    links: LinkTable,
    addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    stopped: Option<crossbeam_channel::Receiver<()>>,
}

impl fmt::Debug for Services {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Services")
            .field("transport", &self.transport)
            .field("addr", &self.addr)
            .finish()
    }
}

impl Services {
    /// Starts the services on `broker_pilot`. With [`Transport::Tcp`] the
    /// accept loop runs as a task on one of the pilot's workers.
    pub fn deploy(
        broker_pilot: &PilotHandle,
        transport: Transport,
        config: BrokerConfig,
        links: LinkTable,
    ) -> Result<Services, ServicesError> {
        let state = broker_pilot.state();
        if state != PilotState::Running {
            return Err(ServicesError::PilotNotRunning(state));
        }
        let broker = Arc::new(Broker::new(config));
        let params = Arc::new(ParamStore::new());
        let stop = Arc::new(AtomicBool::new(false));
        let mut services = Services {
            transport,
            host_pilot: broker_pilot.id(),
            broker,
            params,
            links,
            addr: None,
            stop,
            stopped: None,
        };
        if transport == Transport::Tcp {
            let listener = TcpListener::bind("127.0.0.1:0")
                .map_err(|e| ServicesError::BrokerUnreachable(e.to_string()))?;
            let addr = listener
                .local_addr()
                .map_err(|e| ServicesError::BrokerUnreachable(e.to_string()))?;
            let (b, p, s) = (
                services.broker.clone(),
                services.params.clone(),
                services.stop.clone(),
            );
            let (done_tx, done_rx) = bounded(1);
            broker_pilot
                .submit(Box::new(move |_ctx| {
                    if let Err(e) = serve(listener, b, p, s) {
                        log::error!("broker accept loop failed: {e}");
                    }
                    let _ = done_tx.send(());
                }))
                .map_err(|e| ServicesError::BrokerUnreachable(e.to_string()))?;
            services.addr = Some(addr);
            services.stopped = Some(done_rx);
        }
        Ok(services)
    }

    pub fn transport(&self) -> Transport {
        self.transport
    }

    /// Pilot the services were deployed on.
    pub fn host_pilot(&self) -> uuid::Uuid {
        self.host_pilot
    }

    /// `inproc` or `tcp://host:port`.
    pub fn endpoint(&self) -> String {
        match self.addr {
            Some(a) => format!("tcp://{a}"),
            None => "inproc".to_string(),
        }
    }

    pub fn links(&self) -> &LinkTable {
        &self.links
    }

    /// Direct handle on the broker, bypassing transport and shaping.
    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn params(&self) -> &Arc<ParamStore> {
        &self.params
    }

    /// A broker client for a task running on `from`. The broker lives on
    /// the cloud tier, so traffic from the edge is shaped by the
    /// edge→cloud link if one is installed.
    pub fn broker_client(&self, from: Tier) -> Result<Arc<dyn BrokerApi>, BrokerError> {
        let link = self.links.link(from, Tier::Cloud);
        match self.addr {
            Some(addr) => Ok(Arc::new(TcpClient::connect(addr, link)?)),
            None => Ok(match link {
                Some(link) => Arc::new(ShapedBroker {
                    inner: self.broker.clone(),
                    link,
                }),
                None => self.broker.clone(),
            }),
        }
    }

    pub fn param_client(&self, from: Tier) -> Result<Arc<dyn ParamApi>, ParamError> {
        let link = self.links.link(from, Tier::Cloud);
        match self.addr {
            Some(addr) => Ok(Arc::new(
                TcpClient::connect(addr, link).map_err(|e| ParamError::Transport(e.to_string()))?,
            )),
            None => Ok(self.params.clone()),
        }
    }

    /// Stops the accept loop and waits for its task to finish.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(rx) = self.stopped.take() {
            let _ = rx.recv_timeout(Duration::from_secs(5));
        }
    }
}

impl Drop for Services {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// In-process broker whose requests are delayed as if they crossed `link`.
struct ShapedBroker {
    inner: Arc<Broker>,
    link: Arc<Link>,
}

impl ShapedBroker {
    fn pass(&self, bytes: usize) {
        let now = Instant::now();
        if let Some(&(at, _)) = self.link.schedule(bytes, now).last() {
            clock::sleep_until(at);
        }
    }
}

impl BrokerApi for ShapedBroker {
    fn create_topic(&self, name: &str, partitions: u32, retention: u32) -> Result<TopicInfo, BrokerError> {
        self.pass(name.len() + 16);
        self.inner.create_topic(name, partitions, retention)
    }

    fn produce(&self, topic: &str, partition: u32, record: Record) -> Result<Offset, BrokerError> {
        self.pass(record.payload.len() + topic.len() + PRODUCE_OVERHEAD_BYTES);
        self.inner.produce(topic, partition, record)
    }

    fn fetch(
        &self,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max_records: u32,
        wait: Duration,
    ) -> Result<Vec<FetchedRecord>, BrokerError> {
        self.pass(topic.len() + 24);
        self.inner.fetch(topic, partition, from_offset, max_records, wait)
    }

    fn commit(&self, group: &str, offset: &Offset) -> Result<(), BrokerError> {
        self.pass(group.len() + offset.topic.len() + 16);
        self.inner.commit(group, offset)
    }

    fn committed(&self, group: &str, topic: &str, partition: u32) -> Result<u64, BrokerError> {
        self.pass(group.len() + topic.len() + 8);
        self.inner.committed(group, topic, partition)
    }

    fn assign_partitions(
        &self,
        topic: &str,
        group: &ConsumerGroup,
    ) -> Result<BTreeMap<u32, String>, BrokerError> {
        self.pass(topic.len() + 32);
        self.inner.assign_partitions(topic, group)
    }
}

/// Latest entry of `key`, or `None` when it was never written.
pub fn latest(params: &dyn ParamApi, key: &str) -> Result<Option<ModelEntry>, ParamError> {
    match params.get_model(key, None, Duration::ZERO) {
        Ok(e) => Ok(Some(e)),
        Err(ParamError::KeyNotFound(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
