//! TCP front end serving the broker and parameter-server ops on one port.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{Frame, Request, Response, OP_ERROR};
use super::{Broker, BrokerApi, ConsumerGroup, Offset};
use crate::param::{ParamApi, ParamStore};

const ACCEPT_POLL: Duration = Duration::from_millis(10);

/// Executes one decoded request against the local services.
pub fn dispatch(broker: &Broker, params: &ParamStore, req: Request) -> Response {
    match req {
        Request::CreateTopic {
            name,
            partitions,
            retention,
        } => match broker.create_topic(&name, partitions, retention) {
            Ok(info) => Response::TopicCreated {
                partitions: info.partitions,
                retention: info.retention,
            },
            Err(e) => Response::from_broker_error(&e),
        },
        Request::Produce {
            topic,
            partition,
            record,
        } => match broker.produce(&topic, partition, record) {
            Ok(o) => Response::Produced { offset: o.value },
            Err(e) => Response::from_broker_error(&e),
        },
        Request::Fetch {
            topic,
            partition,
            from_offset,
            max_records,
            wait_ms,
        } => match broker.fetch(
            &topic,
            partition,
            from_offset,
            max_records,
            Duration::from_millis(wait_ms as u64),
        ) {
            Ok(records) => Response::Fetched { partition, records },
            Err(e) => Response::from_broker_error(&e),
        },
        Request::Commit {
            group,
            topic,
            partition,
            offset,
        } => match broker.commit(&group, &Offset::new(topic, partition, offset)) {
            Ok(()) => Response::CommitAck,
            Err(e) => Response::from_broker_error(&e),
        },
        Request::Committed {
            group,
            topic,
            partition,
        } => match broker.committed(&group, &topic, partition) {
            Ok(offset) => Response::CommittedOffset { offset },
            Err(e) => Response::from_broker_error(&e),
        },
        Request::Assign {
            topic,
            group,
            members,
        } => match broker.assign_partitions(&topic, &ConsumerGroup::new(group, members)) {
            Ok(map) => Response::Assigned(map.into_iter().collect()),
            Err(e) => Response::from_broker_error(&e),
        },
        Request::PutParam {
            key,
            expected_version,
            blob,
        } => match params.put_model(&key, blob, expected_version) {
            Ok(version) => Response::ParamPut { version },
            Err(e) => Response::from_param_error(&e),
        },
        Request::GetParam {
            key,
            min_version,
            wait_ms,
        } => match params.get_model(&key, min_version, Duration::from_millis(wait_ms as u64)) {
            Ok(e) => Response::ParamGot {
                version: e.version,
                updated_micros: e.updated_micros,
                blob: e.blob,
            },
            Err(e) => Response::from_param_error(&e),
        },
    }
}

fn handle_connection(stream: TcpStream, broker: Arc<Broker>, params: Arc<ParamStore>) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::with_capacity(1 << 16, match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut writer = BufWriter::with_capacity(1 << 16, stream);
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                log::debug!("connection {peer:?} closed: {e}");
                break;
            }
        };
        let resp = match Request::decode(&frame) {
            Ok(req) => dispatch(&broker, &params, req),
            Err(e) => Response::Error {
                code: super::wire::ErrorCode::Protocol,
                message: e.0,
            },
        };
        let out = match &resp {
            Response::Error { .. } => resp.encode(OP_ERROR),
            _ => resp.encode(frame.op),
        };
        if out.write_to(&mut writer).is_err() {
            break;
        }
    }
}

/// Runs the accept loop until `stop` is raised. Each connection gets its
/// own thread.
pub fn serve(
    listener: TcpListener,
    broker: Arc<Broker>,
    params: Arc<ParamStore>,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let (b, p) = (broker.clone(), params.clone());
                std::thread::Builder::new()
                    .name("broker-conn".into())
                    .spawn(move || handle_connection(stream, b, p))?;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// A server running on its own thread.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn spawn(
        addr: impl std::net::ToSocketAddrs,
        broker: Arc<Broker>,
        params: Arc<ParamStore>,
    ) -> io::Result<ServerHandle> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let s = stop.clone();
        let join = std::thread::Builder::new()
            .name("broker-accept".into())
            .spawn(move || serve(listener, broker, params, s))?;
        Ok(ServerHandle {
            addr,
            stop,
            join: Some(join),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
