//! Blocking TCP client for the broker and parameter-server protocol.

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use parking_lot::Mutex;

use super::wire::{self, Frame, Request, Response};
use super::{BrokerApi, BrokerError, ConsumerGroup, FetchedRecord, Offset, Record, TopicInfo};
use crate::netem::{Link, ShapedWriter};
use crate::param::{ModelEntry, ParamApi, ParamError};

struct Conn {
    reader: BufReader<TcpStream>,
    writer: Box<dyn Write + Send>,
}

/// One connection; requests are serialized over it.
pub struct TcpClient {
    addr: SocketAddr,
    conn: Mutex<Conn>,
}

impl std::fmt::Debug for TcpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TcpClient").field("addr", &self.addr).finish()
    }
}

impl TcpClient {
    /// Connects; when `link` is given, everything this client sends is
    /// shaped by it.
    pub fn connect(addr: SocketAddr, link: Option<Arc<Link>>) -> std::io::Result<TcpClient> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::with_capacity(1 << 16, stream.try_clone()?);
        let writer: Box<dyn Write + Send> = match link {
            Some(link) => Box::new(ShapedWriter::new(stream, link)),
            None => Box::new(stream),
        };
        Ok(TcpClient {
            addr,
            conn: Mutex::new(Conn { reader, writer }),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, req: &Request) -> Result<Response, BrokerError> {
        let frame = req.encode();
        let mut conn = self.conn.lock();
        frame.write_to(&mut conn.writer)?;
        let resp = Frame::read_from(&mut conn.reader)?
            .ok_or_else(|| BrokerError::Io("connection closed by server".into()))?;
        Ok(Response::decode(&resp)?)
    }

    fn broker_call(&self, req: &Request) -> Result<Response, BrokerError> {
        match self.call(req)? {
            Response::Error { code, message } => Err(wire::broker_error(code, message)),
            other => Ok(other),
        }
    }

    fn param_call(&self, req: &Request) -> Result<Response, ParamError> {
        match self.call(req) {
            Ok(Response::Error { code, message }) => Err(wire::param_error(code, message)),
            Ok(other) => Ok(other),
            Err(e) => Err(ParamError::Transport(e.to_string())),
        }
    }
}

fn unexpected<T>(resp: Response) -> Result<T, BrokerError> {
    Err(BrokerError::Protocol(format!("unexpected response {resp:?}")))
}

impl BrokerApi for TcpClient {
    fn create_topic(
        &self,
        name: &str,
        partitions: u32,
        retention: u32,
    ) -> Result<TopicInfo, BrokerError> {
        match self.broker_call(&Request::CreateTopic {
            name: name.to_string(),
            partitions,
            retention,
        })? {
            Response::TopicCreated {
                partitions,
                retention,
            } => Ok(TopicInfo {
                partitions,
                retention,
            }),
            other => unexpected(other),
        }
    }

    fn produce(&self, topic: &str, partition: u32, record: Record) -> Result<Offset, BrokerError> {
        match self.broker_call(&Request::Produce {
            topic: topic.to_string(),
            partition,
            record,
        })? {
            Response::Produced { offset } => Ok(Offset::new(topic, partition, offset)),
            other => unexpected(other),
        }
    }

    fn fetch(
        &self,
        topic: &str,
        partition: u32,
        from_offset: u64,
        max_records: u32,
        wait: Duration,
    ) -> Result<Vec<FetchedRecord>, BrokerError> {
        match self.broker_call(&Request::Fetch {
            topic: topic.to_string(),
            partition,
            from_offset,
            max_records,
            wait_ms: wait.as_millis().min(u32::MAX as u128) as u32,
        })? {
            Response::Fetched { records, .. } => Ok(records),
            other => unexpected(other),
        }
    }

    fn commit(&self, group: &str, offset: &Offset) -> Result<(), BrokerError> {
        match self.broker_call(&Request::Commit {
            group: group.to_string(),
            topic: offset.topic.clone(),
            partition: offset.partition,
            offset: offset.value,
        })? {
            Response::CommitAck => Ok(()),
            other => unexpected(other),
        }
    }

    fn committed(&self, group: &str, topic: &str, partition: u32) -> Result<u64, BrokerError> {
        match self.broker_call(&Request::Committed {
            group: group.to_string(),
            topic: topic.to_string(),
            partition,
        })? {
            Response::CommittedOffset { offset } => Ok(offset),
            other => unexpected(other),
        }
    }

    fn assign_partitions(
        &self,
        topic: &str,
        group: &ConsumerGroup,
    ) -> Result<BTreeMap<u32, String>, BrokerError> {
        match self.broker_call(&Request::Assign {
            topic: topic.to_string(),
            group: group.group_id.clone(),
            members: group.members.clone(),
        })? {
            Response::Assigned(pairs) => Ok(pairs.into_iter().collect()),
            other => unexpected(other),
        }
    }
}

impl ParamApi for TcpClient {
    fn put_model(
        &self,
        key: &str,
        blob: Bytes,
        expected_version: Option<u64>,
    ) -> Result<u64, ParamError> {
        if blob.is_empty() {
            return Err(ParamError::EmptyBlob);
        }
        match self.param_call(&Request::PutParam {
            key: key.to_string(),
            expected_version,
            blob,
        })? {
            Response::ParamPut { version } => Ok(version),
            other => Err(ParamError::Transport(format!("unexpected response {other:?}"))),
        }
    }

    fn get_model(
        &self,
        key: &str,
        min_version: Option<u64>,
        wait: Duration,
    ) -> Result<ModelEntry, ParamError> {
        match self.param_call(&Request::GetParam {
            key: key.to_string(),
            min_version,
            wait_ms: wait.as_millis().min(u32::MAX as u128) as u32,
        })? {
            Response::ParamGot {
                version,
                updated_micros,
                blob,
            } => Ok(ModelEntry {
                key: key.to_string(),
                version,
                blob,
                updated_micros,
            }),
            other => Err(ParamError::Transport(format!("unexpected response {other:?}"))),
        }
    }
}
