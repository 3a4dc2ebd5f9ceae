//! Length-prefixed binary protocol shared by the broker and the parameter
//! server. Little-endian throughout.
//!
//! ```text
//! frame   := len:u32 (bytes after this field) | op:u8 | body
//! record  := job_id:16B | message_id:u64 | ts_count:u8
//!            | ts_count × (tag:u8, micros:u64) | payload_len:u32 | payload
//! string  := len:u16 | utf8
//! ```
//!
//! Requests use op codes 1..=8, responses `128 + op`, errors 255 with body
//! `code:u16 | msg_len:u16 | msg`.

use std::io::{self, Read, Write};

use bytes::{BufMut, Bytes, BytesMut};
use uuid::Uuid;

use super::{BrokerError, FetchedRecord, Record, Stage};
use crate::param::ParamError;

pub const OP_CREATE_TOPIC: u8 = 1;
pub const OP_PRODUCE: u8 = 2;
pub const OP_FETCH: u8 = 3;
pub const OP_COMMIT: u8 = 4;
pub const OP_ASSIGN: u8 = 5;
pub const OP_PUT_PARAM: u8 = 6;
pub const OP_GET_PARAM: u8 = 7;
pub const OP_COMMITTED: u8 = 8;
pub const RESPONSE_BIT: u8 = 128;
pub const OP_ERROR: u8 = 255;

/// Upper bound on a single frame; a 10^6-point record is 256 MB.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub op: u8,
    pub body: Bytes,
}

impl Frame {
    /// Full wire image including the length prefix.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.body.len());
        out.extend_from_slice(&(self.body.len() as u32 + 1).to_le_bytes());
        out.push(self.op);
        out.extend_from_slice(&self.body);
        out
    }

    /// Writes the frame with one `write_all`, so shaped transports see it
    /// as a single transfer.
    pub fn write_to<W: Write + ?Sized>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()
    }

    /// Reads one frame; `Ok(None)` on a clean EOF before the header.
    pub fn read_from<R: Read + ?Sized>(r: &mut R) -> io::Result<Option<Frame>> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len == 0 || len > MAX_FRAME {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("bad frame length {len}"),
            ));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let op = buf[0];
        let body = Bytes::from(buf).slice(1..);
        Ok(Some(Frame { op, body }))
    }

    /// Parses a complete wire image (length prefix included).
    pub fn parse(bytes: &[u8]) -> Result<Frame, WireError> {
        let mut cur = bytes;
        match Frame::read_from(&mut cur) {
            Ok(Some(f)) if cur.is_empty() => Ok(f),
            Ok(Some(_)) => Err(WireError("trailing bytes after frame".into())),
            Ok(None) => Err(WireError("empty input".into())),
            Err(e) => Err(WireError(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed frame: {0}")]
pub struct WireError(pub String);

impl From<WireError> for BrokerError {
    fn from(e: WireError) -> Self {
        BrokerError::Protocol(e.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    CreateTopic {
        name: String,
        partitions: u32,
        retention: u32,
    },
    Produce {
        topic: String,
        partition: u32,
        record: Record,
    },
    Fetch {
        topic: String,
        partition: u32,
        from_offset: u64,
        max_records: u32,
        wait_ms: u32,
    },
    Commit {
        group: String,
        topic: String,
        partition: u32,
        offset: u64,
    },
    Assign {
        topic: String,
        group: String,
        members: Vec<String>,
    },
    PutParam {
        key: String,
        expected_version: Option<u64>,
        blob: Bytes,
    },
    GetParam {
        key: String,
        min_version: Option<u64>,
        wait_ms: u32,
    },
    Committed {
        group: String,
        topic: String,
        partition: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    TopicCreated {
        partitions: u32,
        retention: u32,
    },
    Produced {
        offset: u64,
    },
    Fetched {
        partition: u32,
        records: Vec<FetchedRecord>,
    },
    CommitAck,
    Assigned(Vec<(u32, String)>),
    ParamPut {
        version: u64,
    },
    ParamGot {
        version: u64,
        updated_micros: u64,
        blob: Bytes,
    },
    CommittedOffset {
        offset: u64,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

/// Error codes carried in ERROR frames. Variants with structured payloads
/// put their numbers in the message as space-separated decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    UnknownTopic = 1,
    PartitionOutOfRange = 2,
    TopicExistsWithDifferentConfig = 3,
    BackpressureTimeout = 4,
    OffsetOutOfRetention = 5,
    OffsetOutOfRange = 6,
    MalformedRecord = 7,
    InvalidArgument = 8,
    VersionConflict = 9,
    EmptyBlob = 10,
    KeyNotFound = 11,
    Timeout = 12,
    Protocol = 13,
    Internal = 14,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<ErrorCode> {
        use ErrorCode::*;
        Some(match v {
            1 => UnknownTopic,
            2 => PartitionOutOfRange,
            3 => TopicExistsWithDifferentConfig,
            4 => BackpressureTimeout,
            5 => OffsetOutOfRetention,
            6 => OffsetOutOfRange,
            7 => MalformedRecord,
            8 => InvalidArgument,
            9 => VersionConflict,
            10 => EmptyBlob,
            11 => KeyNotFound,
            12 => Timeout,
            13 => Protocol,
            14 => Internal,
            _ => return None,
        })
    }
}

impl Response {
    pub fn from_broker_error(e: &BrokerError) -> Response {
        let (code, message) = match e {
            BrokerError::UnknownTopic(t) => (ErrorCode::UnknownTopic, t.clone()),
            BrokerError::PartitionOutOfRange { partition, count } => {
                (ErrorCode::PartitionOutOfRange, format!("{partition} {count}"))
            }
            BrokerError::TopicExistsWithDifferentConfig(t) => {
                (ErrorCode::TopicExistsWithDifferentConfig, t.clone())
            }
            BrokerError::BackpressureTimeout => (ErrorCode::BackpressureTimeout, String::new()),
            BrokerError::OffsetOutOfRetention { oldest } => {
                (ErrorCode::OffsetOutOfRetention, oldest.to_string())
            }
            BrokerError::OffsetOutOfRange { offset, end } => {
                (ErrorCode::OffsetOutOfRange, format!("{offset} {end}"))
            }
            BrokerError::MalformedRecord(m) => (ErrorCode::MalformedRecord, m.clone()),
            BrokerError::InvalidArgument(m) => (ErrorCode::InvalidArgument, m.clone()),
            BrokerError::Protocol(m) => (ErrorCode::Protocol, m.clone()),
            BrokerError::Io(m) => (ErrorCode::Internal, m.clone()),
        };
        Response::Error { code, message }
    }

    pub fn from_param_error(e: &ParamError) -> Response {
        let (code, message) = match e {
            ParamError::VersionConflict { current } => {
                (ErrorCode::VersionConflict, current.to_string())
            }
            ParamError::EmptyBlob => (ErrorCode::EmptyBlob, String::new()),
            ParamError::KeyNotFound(k) => (ErrorCode::KeyNotFound, k.clone()),
            ParamError::Timeout { current } => (
                ErrorCode::Timeout,
                current.map(|c| c.to_string()).unwrap_or_default(),
            ),
            ParamError::InvalidKey(k) => (ErrorCode::InvalidArgument, k.clone()),
            ParamError::Transport(m) => (ErrorCode::Internal, m.clone()),
        };
        Response::Error { code, message }
    }
}

fn numbers(msg: &str) -> Vec<u64> {
    msg.split_whitespace().filter_map(|t| t.parse().ok()).collect()
}

/// Maps an ERROR frame back onto the broker error it was produced from.
pub fn broker_error(code: ErrorCode, message: String) -> BrokerError {
    let n = numbers(&message);
    let at = |i: usize| n.get(i).copied().unwrap_or(0);
    match code {
        ErrorCode::UnknownTopic => BrokerError::UnknownTopic(message),
        ErrorCode::PartitionOutOfRange => BrokerError::PartitionOutOfRange {
            partition: at(0) as u32,
            count: at(1) as u32,
        },
        ErrorCode::TopicExistsWithDifferentConfig => {
            BrokerError::TopicExistsWithDifferentConfig(message)
        }
        ErrorCode::BackpressureTimeout => BrokerError::BackpressureTimeout,
        ErrorCode::OffsetOutOfRetention => BrokerError::OffsetOutOfRetention { oldest: at(0) },
        ErrorCode::OffsetOutOfRange => BrokerError::OffsetOutOfRange {
            offset: at(0),
            end: at(1),
        },
        ErrorCode::MalformedRecord => BrokerError::MalformedRecord(message),
        ErrorCode::InvalidArgument => BrokerError::InvalidArgument(message),
        ErrorCode::Protocol => BrokerError::Protocol(message),
        other => BrokerError::Protocol(format!("unexpected error {other:?}: {message}")),
    }
}

/// Maps an ERROR frame back onto the parameter-server error.
pub fn param_error(code: ErrorCode, message: String) -> ParamError {
    let n = numbers(&message);
    match code {
        ErrorCode::VersionConflict => ParamError::VersionConflict {
            current: n.first().copied().unwrap_or(0),
        },
        ErrorCode::EmptyBlob => ParamError::EmptyBlob,
        ErrorCode::KeyNotFound => ParamError::KeyNotFound(message),
        ErrorCode::Timeout => ParamError::Timeout {
            current: n.first().copied(),
        },
        ErrorCode::InvalidArgument => ParamError::InvalidKey(message),
        other => ParamError::Transport(format!("{other:?}: {message}")),
    }
}

// ---------------------------------------------------------------- encoding

fn put_str(buf: &mut BytesMut, s: &str) {
    debug_assert!(s.len() <= u16::MAX as usize);
    buf.put_u16_le(s.len() as u16);
    buf.put_slice(s.as_bytes());
}

fn put_opt(buf: &mut BytesMut, v: Option<u64>) {
    buf.put_u8(v.is_some() as u8);
    buf.put_u64_le(v.unwrap_or(0));
}

pub fn encode_record(buf: &mut BytesMut, r: &Record) {
    buf.put_slice(r.job_id.as_bytes());
    buf.put_u64_le(r.message_id);
    buf.put_u8(r.timestamps.len() as u8);
    for (stage, micros) in &r.timestamps {
        buf.put_u8(stage.tag());
        buf.put_u64_le(*micros);
    }
    buf.put_u32_le(r.payload.len() as u32);
    buf.put_slice(&r.payload);
}

impl Request {
    pub fn op(&self) -> u8 {
        match self {
            Request::CreateTopic { .. } => OP_CREATE_TOPIC,
            Request::Produce { .. } => OP_PRODUCE,
            Request::Fetch { .. } => OP_FETCH,
            Request::Commit { .. } => OP_COMMIT,
            Request::Assign { .. } => OP_ASSIGN,
            Request::PutParam { .. } => OP_PUT_PARAM,
            Request::GetParam { .. } => OP_GET_PARAM,
            Request::Committed { .. } => OP_COMMITTED,
        }
    }

    pub fn encode(&self) -> Frame {
        let mut b = BytesMut::new();
        match self {
            Request::CreateTopic {
                name,
                partitions,
                retention,
            } => {
                put_str(&mut b, name);
                b.put_u32_le(*partitions);
                b.put_u32_le(*retention);
            }
            Request::Produce {
                topic,
                partition,
                record,
            } => {
                b.reserve(topic.len() + record.payload.len() + 64);
                put_str(&mut b, topic);
                b.put_u32_le(*partition);
                encode_record(&mut b, record);
            }
            Request::Fetch {
                topic,
                partition,
                from_offset,
                max_records,
                wait_ms,
            } => {
                put_str(&mut b, topic);
                b.put_u32_le(*partition);
                b.put_u64_le(*from_offset);
                b.put_u32_le(*max_records);
                b.put_u32_le(*wait_ms);
            }
            Request::Commit {
                group,
                topic,
                partition,
                offset,
            } => {
                put_str(&mut b, group);
                put_str(&mut b, topic);
                b.put_u32_le(*partition);
                b.put_u64_le(*offset);
            }
            Request::Assign {
                topic,
                group,
                members,
            } => {
                put_str(&mut b, topic);
                put_str(&mut b, group);
                b.put_u16_le(members.len() as u16);
                for m in members {
                    put_str(&mut b, m);
                }
            }
            Request::PutParam {
                key,
                expected_version,
                blob,
            } => {
                put_str(&mut b, key);
                put_opt(&mut b, *expected_version);
                b.put_u32_le(blob.len() as u32);
                b.put_slice(blob);
            }
            Request::GetParam {
                key,
                min_version,
                wait_ms,
            } => {
                put_str(&mut b, key);
                put_opt(&mut b, *min_version);
                b.put_u32_le(*wait_ms);
                b.put_u32_le(0);
            }
            Request::Committed {
                group,
                topic,
                partition,
            } => {
                put_str(&mut b, group);
                put_str(&mut b, topic);
                b.put_u32_le(*partition);
            }
        }
        Frame {
            op: self.op(),
            body: b.freeze(),
        }
    }

    pub fn decode(frame: &Frame) -> Result<Request, WireError> {
        let mut r = Reader::new(frame.body.clone());
        let req = match frame.op {
            OP_CREATE_TOPIC => Request::CreateTopic {
                name: r.string()?,
                partitions: r.u32()?,
                retention: r.u32()?,
            },
            OP_PRODUCE => {
                let topic = r.string()?;
                let partition = r.u32()?;
                let record = r.record(partition)?;
                Request::Produce {
                    topic,
                    partition,
                    record,
                }
            }
            OP_FETCH => Request::Fetch {
                topic: r.string()?,
                partition: r.u32()?,
                from_offset: r.u64()?,
                max_records: r.u32()?,
                wait_ms: r.u32()?,
            },
            OP_COMMIT => Request::Commit {
                group: r.string()?,
                topic: r.string()?,
                partition: r.u32()?,
                offset: r.u64()?,
            },
            OP_ASSIGN => {
                let topic = r.string()?;
                let group = r.string()?;
                let n = r.u16()?;
                let members = (0..n).map(|_| r.string()).collect::<Result<_, _>>()?;
                Request::Assign {
                    topic,
                    group,
                    members,
                }
            }
            OP_PUT_PARAM => {
                let key = r.string()?;
                let expected_version = r.opt()?;
                let len = r.u32()? as usize;
                Request::PutParam {
                    key,
                    expected_version,
                    blob: r.bytes(len)?,
                }
            }
            OP_GET_PARAM => {
                let key = r.string()?;
                let min_version = r.opt()?;
                let wait_ms = r.u32()?;
                if r.u32()? != 0 {
                    return Err(WireError("GET_PARAM carries no blob".into()));
                }
                Request::GetParam {
                    key,
                    min_version,
                    wait_ms,
                }
            }
            OP_COMMITTED => Request::Committed {
                group: r.string()?,
                topic: r.string()?,
                partition: r.u32()?,
            },
            op => return Err(WireError(format!("unknown request op {op}"))),
        };
        r.finish()?;
        Ok(req)
    }
}

impl Response {
    pub fn encode(&self, request_op: u8) -> Frame {
        let mut b = BytesMut::new();
        let op = match self {
            Response::Error { code, message } => {
                b.put_u16_le(*code as u16);
                put_str(&mut b, message);
                return Frame {
                    op: OP_ERROR,
                    body: b.freeze(),
                };
            }
            Response::TopicCreated {
                partitions,
                retention,
            } => {
                b.put_u32_le(*partitions);
                b.put_u32_le(*retention);
                OP_CREATE_TOPIC
            }
            Response::Produced { offset } => {
                b.put_u64_le(*offset);
                OP_PRODUCE
            }
            Response::Fetched { partition, records } => {
                b.reserve(records.iter().map(|f| f.record.payload.len() + 64).sum());
                b.put_u32_le(*partition);
                b.put_u32_le(records.len() as u32);
                for f in records {
                    b.put_u64_le(f.offset);
                    encode_record(&mut b, &f.record);
                }
                OP_FETCH
            }
            Response::CommitAck => OP_COMMIT,
            Response::Assigned(pairs) => {
                b.put_u32_le(pairs.len() as u32);
                for (p, m) in pairs {
                    b.put_u32_le(*p);
                    put_str(&mut b, m);
                }
                OP_ASSIGN
            }
            Response::ParamPut { version } => {
                b.put_u64_le(*version);
                OP_PUT_PARAM
            }
            Response::ParamGot {
                version,
                updated_micros,
                blob,
            } => {
                b.put_u64_le(*version);
                b.put_u64_le(*updated_micros);
                b.put_u32_le(blob.len() as u32);
                b.put_slice(blob);
                OP_GET_PARAM
            }
            Response::CommittedOffset { offset } => {
                b.put_u64_le(*offset);
                OP_COMMITTED
            }
        };
        debug_assert_eq!(op, request_op);
        Frame {
            op: RESPONSE_BIT | op,
            body: b.freeze(),
        }
    }

    pub fn decode(frame: &Frame) -> Result<Response, WireError> {
        let mut r = Reader::new(frame.body.clone());
        let resp = match frame.op {
            OP_ERROR => {
                let raw = r.u16()?;
                let code = ErrorCode::from_u16(raw)
                    .ok_or_else(|| WireError(format!("unknown error code {raw}")))?;
                Response::Error {
                    code,
                    message: r.string()?,
                }
            }
            op if op & RESPONSE_BIT == 0 => {
                return Err(WireError(format!("op {op} is not a response")))
            }
            op => match op & !RESPONSE_BIT {
                OP_CREATE_TOPIC => Response::TopicCreated {
                    partitions: r.u32()?,
                    retention: r.u32()?,
                },
                OP_PRODUCE => Response::Produced { offset: r.u64()? },
                OP_FETCH => {
                    let partition = r.u32()?;
                    let n = r.u32()?;
                    let mut records = Vec::with_capacity(n.min(1024) as usize);
                    for _ in 0..n {
                        let offset = r.u64()?;
                        records.push(FetchedRecord {
                            offset,
                            record: r.record(partition)?,
                        });
                    }
                    Response::Fetched { partition, records }
                }
                OP_COMMIT => Response::CommitAck,
                OP_ASSIGN => {
                    let n = r.u32()?;
                    let mut pairs = Vec::with_capacity(n.min(1024) as usize);
                    for _ in 0..n {
                        pairs.push((r.u32()?, r.string()?));
                    }
                    Response::Assigned(pairs)
                }
                OP_PUT_PARAM => Response::ParamPut { version: r.u64()? },
                OP_GET_PARAM => {
                    let version = r.u64()?;
                    let updated_micros = r.u64()?;
                    let len = r.u32()? as usize;
                    Response::ParamGot {
                        version,
                        updated_micros,
                        blob: r.bytes(len)?,
                    }
                }
                OP_COMMITTED => Response::CommittedOffset { offset: r.u64()? },
                other => return Err(WireError(format!("unknown response op {other}"))),
            },
        };
        r.finish()?;
        Ok(resp)
    }
}

/// Bounds-checked little-endian cursor.
struct Reader {
    buf: Bytes,
    pos: usize,
}

impl Reader {
    fn new(buf: Bytes) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError(format!(
                "need {n} bytes at {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn opt(&mut self) -> Result<Option<u64>, WireError> {
        let flag = self.u8()?;
        let v = self.u64()?;
        match (flag, v) {
            (0, 0) => Ok(None),
            (1, v) => Ok(Some(v)),
            _ => Err(WireError("non-canonical optional field".into())),
        }
    }

    fn string(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| WireError("string is not utf-8".into()))
    }

    fn bytes(&mut self, n: usize) -> Result<Bytes, WireError> {
        self.take(n)?;
        Ok(self.buf.slice(self.pos - n..self.pos))
    }

    fn record(&mut self, partition: u32) -> Result<Record, WireError> {
        let job_id = Uuid::from_bytes(self.take(16)?.try_into().unwrap());
        let message_id = self.u64()?;
        let n = self.u8()?;
        let mut timestamps = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let tag = self.u8()?;
            let stage =
                Stage::from_tag(tag).ok_or_else(|| WireError(format!("bad stage tag {tag}")))?;
            timestamps.push((stage, self.u64()?));
        }
        let len = self.u32()? as usize;
        Ok(Record {
            job_id,
            message_id,
            partition,
            payload: self.bytes(len)?,
            timestamps,
        })
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError(format!(
                "{} trailing byte(s)",
                self.buf.len() - self.pos
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> Record {
        Record {
            job_id: Uuid::from_u128(0x0102_0304_0506_0708_090a_0b0c_0d0e_0f10),
            message_id: 7,
            partition: 3,
            payload: Bytes::from_static(&[0xAB; 256]),
            timestamps: vec![(Stage::Produced, 100), (Stage::BrokerIn, 150)],
        }
    }

    #[test]
    fn produce_layout_is_bit_exact() {
        let req = Request::Produce {
            topic: "t".into(),
            partition: 3,
            record: sample_record(),
        };
        let bytes = req.encode().to_bytes();
        let mut expected = Vec::new();
        let body_len = 2 + 1 + 4 + 16 + 8 + 1 + 2 * 9 + 4 + 256;
        expected.extend_from_slice(&(body_len as u32 + 1).to_le_bytes());
        expected.push(OP_PRODUCE);
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b't');
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(&0x0102_0304_0506_0708_090a_0b0c_0d0e_0f10u128.to_be_bytes());
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.push(2);
        expected.push(1);
        expected.extend_from_slice(&100u64.to_le_bytes());
        expected.push(2);
        expected.extend_from_slice(&150u64.to_le_bytes());
        expected.extend_from_slice(&256u32.to_le_bytes());
        expected.extend_from_slice(&[0xAB; 256]);
        assert_eq!(bytes, expected);

        let frame = Frame::parse(&bytes).unwrap();
        assert_eq!(Request::decode(&frame).unwrap(), req);
    }

    #[test]
    fn error_layout() {
        let f = Response::from_broker_error(&BrokerError::OffsetOutOfRetention { oldest: 42 })
            .encode(OP_FETCH);
        assert_eq!(f.op, OP_ERROR);
        assert_eq!(&f.body[..2], &5u16.to_le_bytes());
        assert_eq!(&f.body[2..4], &2u16.to_le_bytes());
        assert_eq!(&f.body[4..], b"42");
        match Response::decode(&f).unwrap() {
            Response::Error { code, message } => assert_eq!(
                broker_error(code, message),
                BrokerError::OffsetOutOfRetention { oldest: 42 }
            ),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn response_ops_have_high_bit() {
        let f = Response::Produced { offset: 1 }.encode(OP_PRODUCE);
        assert_eq!(f.op, 130);
        let f = Response::ParamPut { version: 1 }.encode(OP_PUT_PARAM);
        assert_eq!(f.op, 134);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Frame::parse(&[0, 0, 0, 0]).is_err());
        assert!(Frame::parse(&[2, 0, 0, 0, 1]).is_err());
        let f = Frame {
            op: OP_FETCH,
            body: Bytes::from_static(&[1, 0]),
        };
        assert!(Request::decode(&f).is_err());
        let f = Frame {
            op: 99,
            body: Bytes::new(),
        };
        assert!(Request::decode(&f).is_err());
        // trailing byte after a complete CREATE_TOPIC body
        let mut body = Request::CreateTopic {
            name: "a".into(),
            partitions: 1,
            retention: 1,
        }
        .encode()
        .body
        .to_vec();
        body.push(0);
        assert!(Request::decode(&Frame {
            op: OP_CREATE_TOPIC,
            body: body.into()
        })
        .is_err());
    }

    #[test]
    fn every_broker_error_maps_back() {
        let errors = [
            BrokerError::UnknownTopic("x".into()),
            BrokerError::PartitionOutOfRange {
                partition: 4,
                count: 4,
            },
            BrokerError::TopicExistsWithDifferentConfig("x".into()),
            BrokerError::BackpressureTimeout,
            BrokerError::OffsetOutOfRetention { oldest: 9 },
            BrokerError::OffsetOutOfRange { offset: 5, end: 3 },
            BrokerError::MalformedRecord("m".into()),
            BrokerError::InvalidArgument("a".into()),
        ];
        for e in errors {
            let f = Response::from_broker_error(&e).encode(0);
            let Response::Error { code, message } = Response::decode(&f).unwrap() else {
                panic!()
            };
            assert_eq!(broker_error(code, message), e);
        }
    }
}
